"""The fixed CNN-Transformer network: assembly, forward pass, serialization.

Architecture: four valid-padded 1-D convolutions (ReLU each) squeeze the
3000-sample epoch down to a [19, 128] feature map, one pre-norm transformer
block (self-attention + position-wise feed-forward, residual adds) mixes
contexts across the 19 positions, and a dense softmax classifier over the
flattened features yields the 5 stage probabilities.

Model files use the "SLPM" container: a little-endian header holding the
architecture block, a tensor directory (name, rank, dims, dtype, offset,
length, plus a float32 scale after each int8 entry), then raw payloads.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .epochs import EPOCH_SAMPLES

MODEL_MAGIC = b"SLPM"
MODEL_VERSION = 1
FLAG_QUANTIZED = 0x0001

DTYPE_F32 = 0
DTYPE_I8 = 1


class ModelFormatError(ValueError):
    """Corrupt, truncated, or incompatible model file."""


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters; channel widths scale with width_multiplier.

    conv_table rows are (kernel, stride, out_channels) at multiplier 1.0.
    Scaled channel counts round to a multiple of `heads` so attention always
    splits evenly.
    """

    conv_table: tuple[tuple[int, int, int], ...] = (
        (50, 6, 32),
        (8, 4, 64),
        (8, 3, 128),
        (3, 2, 128),
    )
    d_model: int = 128
    heads: int = 4
    ffn_dim: int = 256
    n_classes: int = 5
    width_multiplier: float = 1.0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.conv_table[-1][2] != self.d_model:
            raise ValueError("last conv layer must emit d_model channels")
        if self.width_multiplier <= 0:
            raise ValueError("width_multiplier must be positive")

    def _scale(self, channels: int) -> int:
        scaled = round(channels * self.width_multiplier / self.heads) * self.heads
        return max(self.heads, scaled)

    @property
    def scaled_conv_table(self) -> tuple[tuple[int, int, int], ...]:
        return tuple((k, s, self._scale(c)) for k, s, c in self.conv_table)

    @property
    def scaled_d_model(self) -> int:
        return self._scale(self.d_model)

    @property
    def scaled_ffn_dim(self) -> int:
        return self._scale(self.ffn_dim)

    def conv_lengths(self, input_len: int = EPOCH_SAMPLES) -> list[int]:
        """Sequence lengths after each conv layer: floor((L - K)/stride) + 1."""
        lengths = []
        length = input_len
        for k, s, _ in self.conv_table:
            if length < k:
                raise ValueError(f"conv kernel {k} longer than input {length}")
            length = (length - k) // s + 1
            lengths.append(length)
        return lengths

    @property
    def feature_len(self) -> int:
        return self.conv_lengths()[-1]

    @property
    def flat_dim(self) -> int:
        return self.feature_len * self.scaled_d_model


def default_arch() -> ArchConfig:
    return ArchConfig()


def expected_shapes(config: ArchConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor name -> shape map; its order fixes RNG and file order."""
    shapes: dict[str, tuple[int, ...]] = {}
    cin = 1
    for i, (k, _, cout) in enumerate(config.scaled_conv_table, start=1):
        shapes[f"conv{i}_w"] = (k, cin, cout)
        shapes[f"conv{i}_b"] = (cout,)
        cin = cout
    d = config.scaled_d_model
    for suffix in ("q", "k", "v", "o"):
        shapes[f"attn_w{suffix}"] = (d, d)
        shapes[f"attn_b{suffix}"] = (d,)
    for block in ("ln1", "ln2"):
        shapes[f"{block}_gain"] = (d,)
        shapes[f"{block}_shift"] = (d,)
    f = config.scaled_ffn_dim
    shapes["ffn1_w"] = (d, f)
    shapes["ffn1_b"] = (f,)
    shapes["ffn2_w"] = (f, d)
    shapes["ffn2_b"] = (d,)
    shapes["cls_w"] = (config.flat_dim, config.n_classes)
    shapes["cls_b"] = (config.n_classes,)
    return shapes


@dataclass
class ModelParams:
    """Named-tensor container for all weights, in canonical order."""

    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams({n: t.copy() for n, t in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({n: t.astype(dtype) for n, t in self.tensors.items()})


def param_count(params: ModelParams) -> int:
    return sum(t.size for t in params.tensors.values())


def init_params(config: ArchConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit layer-norm gains.

    Weights draw from uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out));
    conv fans count the kernel extent.  Deterministic in the seed.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes(config).items():
        if len(shape) == 1:  # biases zero, layer-norm gains one
            fill = 1.0 if name.endswith("_gain") else 0.0
            tensors[name] = np.full(shape, fill, dtype=np.float64)
        else:
            if len(shape) == 3:  # conv kernel [K, Cin, Cout]
                k, cin, cout = shape
                fan_in, fan_out = k * cin, k * cout
            else:  # dense [N, M]
                fan_in, fan_out = shape
            a = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-a, a, size=shape)
    return ModelParams(tensors)


@dataclass
class ForwardCache:
    """Per-layer activations retained by a training-mode forward pass."""

    conv_inputs: list[np.ndarray] = field(default_factory=list)
    conv_preacts: list[np.ndarray] = field(default_factory=list)
    features: np.ndarray | None = None  # conv stack output [T, D]
    normed1: np.ndarray | None = None
    attn: kernels.AttentionCache | None = None
    resid1: np.ndarray | None = None
    normed2: np.ndarray | None = None
    ffn_preact: np.ndarray | None = None
    ffn_hidden: np.ndarray | None = None
    resid2: np.ndarray | None = None
    flat: np.ndarray | None = None
    probs: np.ndarray | None = None


def forward(
    params: ModelParams,
    x: np.ndarray,
    config: ArchConfig,
    mode: str = "infer",
) -> tuple[np.ndarray, ForwardCache | None]:
    """Run the network on one standardized epoch.

    x is [3000] or [3000, 1]; returns (probs[5], cache) with cache only in
    "train" mode.  Compute happens in the dtype the parameters carry.
    """
    if mode not in ("infer", "train"):
        raise ValueError(f"mode must be 'infer' or 'train', got {mode!r}")
    dtype = params["conv1_w"].dtype
    h = np.asarray(x, dtype=dtype).reshape(-1, 1)
    if h.shape[0] != EPOCH_SAMPLES:
        raise ValueError(f"input must hold {EPOCH_SAMPLES} samples, got {h.shape[0]}")
    cache = ForwardCache() if mode == "train" else None

    for i, (_, stride, _) in enumerate(config.scaled_conv_table, start=1):
        z = kernels.conv1d(h, params[f"conv{i}_w"], params[f"conv{i}_b"], stride)
        if cache is not None:
            cache.conv_inputs.append(h)
            cache.conv_preacts.append(z)
        h = kernels.relu(z)

    features = h  # [feature_len, d_model]
    expected = (config.feature_len, config.scaled_d_model)
    if features.shape != expected:
        raise ValueError(f"conv stack produced {features.shape}, config says {expected}")
    normed1 = kernels.layer_norm(features, params["ln1_gain"], params["ln1_shift"])
    if cache is not None:
        attn_out, attn_cache = kernels.multi_head_attention_with_cache(
            normed1,
            params["attn_wq"], params["attn_bq"],
            params["attn_wk"], params["attn_bk"],
            params["attn_wv"], params["attn_bv"],
            params["attn_wo"], params["attn_bo"],
            config.heads,
        )
        cache.attn = attn_cache
    else:
        attn_out = kernels.multi_head_attention(
            normed1,
            params["attn_wq"], params["attn_bq"],
            params["attn_wk"], params["attn_bk"],
            params["attn_wv"], params["attn_bv"],
            params["attn_wo"], params["attn_bo"],
            config.heads,
        )
    resid1 = features + attn_out

    normed2 = kernels.layer_norm(resid1, params["ln2_gain"], params["ln2_shift"])
    ffn_preact = kernels.dense(normed2, params["ffn1_w"], params["ffn1_b"])
    ffn_hidden = kernels.relu(ffn_preact)
    ffn_out = kernels.dense(ffn_hidden, params["ffn2_w"], params["ffn2_b"])
    resid2 = resid1 + ffn_out

    flat = resid2.reshape(-1)
    logits = kernels.dense(flat, params["cls_w"], params["cls_b"])
    probs = kernels.softmax(logits)

    if cache is not None:
        cache.features = features
        cache.normed1 = normed1
        cache.resid1 = resid1
        cache.normed2 = normed2
        cache.ffn_preact = ffn_preact
        cache.ffn_hidden = ffn_hidden
        cache.resid2 = resid2
        cache.flat = flat
        cache.probs = probs
    return probs, cache


# --- SLPM container -------------------------------------------------------

_CONFIG_FMT_HEAD = "<I"  # number of conv layers
_CONFIG_FMT_TAIL = "<IIIIf"  # d_model, heads, ffn_dim, n_classes, width_multiplier


def _pack_config(config: ArchConfig) -> bytes:
    buf = struct.pack(_CONFIG_FMT_HEAD, len(config.conv_table))
    for k, s, c in config.conv_table:
        buf += struct.pack("<III", k, s, c)
    buf += struct.pack(
        _CONFIG_FMT_TAIL,
        config.d_model,
        config.heads,
        config.ffn_dim,
        config.n_classes,
        config.width_multiplier,
    )
    return buf


def _unpack_config(f) -> ArchConfig:
    (n_conv,) = struct.unpack(_CONFIG_FMT_HEAD, _take(f, 4))
    table = tuple(struct.unpack("<III", _take(f, 12)) for _ in range(n_conv))
    d_model, heads, ffn_dim, n_classes, mult = struct.unpack(
        _CONFIG_FMT_TAIL, _take(f, struct.calcsize(_CONFIG_FMT_TAIL))
    )
    try:
        return ArchConfig(
            conv_table=table,
            d_model=d_model,
            heads=heads,
            ffn_dim=ffn_dim,
            n_classes=n_classes,
            width_multiplier=float(mult),
        )
    except ValueError as exc:
        raise ModelFormatError(f"invalid architecture block: {exc}") from None


def _take(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ModelFormatError(f"model file truncated: wanted {n} bytes, got {len(data)}")
    return data


def write_slpm(
    path: str | Path,
    config: ArchConfig,
    entries: list[tuple[str, np.ndarray, float | None]],
    quantized: bool,
) -> None:
    """Write tensors to an SLPM file.

    entries are (name, array, scale); scale must be given exactly for int8
    arrays and None for float32 arrays.
    """
    directory = io.BytesIO()
    payload = io.BytesIO()
    header_less_dir = (
        len(MODEL_MAGIC) + 2 + 2 + len(_pack_config(config)) + 4
    )
    # Directory size must be known before offsets; compute entry sizes first.
    dir_size = 0
    for name, arr, scale in entries:
        dir_size += 1 + len(name) + 1 + 4 * arr.ndim + 1 + 8 + 8
        if scale is not None:
            dir_size += 4
    offset = header_less_dir + dir_size

    for name, arr, scale in entries:
        if scale is None:
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            dtype_code = DTYPE_F32
        else:
            raw = np.ascontiguousarray(arr, dtype=np.int8).tobytes()
            dtype_code = DTYPE_I8
        encoded = name.encode("ascii")
        directory.write(struct.pack("<B", len(encoded)))
        directory.write(encoded)
        directory.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            directory.write(struct.pack("<I", dim))
        directory.write(struct.pack("<BQQ", dtype_code, offset, len(raw)))
        if scale is not None:
            directory.write(struct.pack("<f", scale))
        payload.write(raw)
        offset += len(raw)

    flags = FLAG_QUANTIZED if quantized else 0
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<HH", MODEL_VERSION, flags))
        f.write(_pack_config(config))
        f.write(struct.pack("<I", len(entries)))
        f.write(directory.getvalue())
        f.write(payload.getvalue())


def read_slpm(
    path: str | Path,
) -> tuple[ArchConfig, int, list[tuple[str, np.ndarray, float | None]]]:
    """Read an SLPM file back into (config, flags, entries)."""
    with open(path, "rb") as f:
        if _take(f, 4) != MODEL_MAGIC:
            raise ModelFormatError("bad magic: not an SLPM model file")
        version, flags = struct.unpack("<HH", _take(f, 4))
        if version != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        config = _unpack_config(f)
        (count,) = struct.unpack("<I", _take(f, 4))
        directory = []
        for _ in range(count):
            (name_len,) = struct.unpack("<B", _take(f, 1))
            name = _take(f, name_len).decode("ascii")
            (rank,) = struct.unpack("<B", _take(f, 1))
            dims = tuple(struct.unpack("<I", _take(f, 4))[0] for _ in range(rank))
            dtype_code, offset, length = struct.unpack("<BQQ", _take(f, 17))
            scale = None
            if dtype_code == DTYPE_I8:
                (scale,) = struct.unpack("<f", _take(f, 4))
            elif dtype_code != DTYPE_F32:
                raise ModelFormatError(f"unknown dtype code {dtype_code} for {name}")
            directory.append((name, dims, dtype_code, offset, length, scale))
        entries = []
        for name, dims, dtype_code, offset, length, scale in directory:
            f.seek(offset)
            raw = _take(f, length)
            if dtype_code == DTYPE_F32:
                arr = np.frombuffer(raw, dtype="<f4")
            else:
                arr = np.frombuffer(raw, dtype=np.int8)
            if arr.size != int(np.prod(dims, dtype=np.int64)):
                raise ModelFormatError(f"tensor {name}: payload does not match dims {dims}")
            entries.append((name, arr.reshape(dims).copy(), scale))
    return config, flags, entries


def save_model(params: ModelParams, config: ArchConfig, path: str | Path) -> None:
    """Serialize float32 weights; training-precision copies are down-cast."""
    entries = [(name, arr, None) for name, arr in params.tensors.items()]
    write_slpm(path, config, entries, quantized=False)


def load_model(path: str | Path) -> tuple[ModelParams, ArchConfig]:
    """Load a float32 model, validating every tensor shape against its config."""
    config, flags, entries = read_slpm(path)
    if flags & FLAG_QUANTIZED:
        raise ModelFormatError("file holds a quantized model; load it via the quant module")
    shapes = expected_shapes(config)
    tensors: dict[str, np.ndarray] = {}
    for name, arr, _ in entries:
        if name not in shapes:
            raise ModelFormatError(f"unexpected tensor {name!r}")
        if arr.shape != shapes[name]:
            raise ModelFormatError(
                f"tensor {name}: shape {arr.shape} != expected {shapes[name]}"
            )
        tensors[name] = arr
    missing = set(shapes) - set(tensors)
    if missing:
        raise ModelFormatError(f"missing tensors: {sorted(missing)}")
    # Restore canonical order regardless of file order.
    return ModelParams({name: tensors[name] for name in shapes}), config
