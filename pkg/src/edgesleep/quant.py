"""Post-training int8 quantization of model weights.

Symmetric per-tensor scheme: scale = max|t| / 127, values rounded half-to-
even and clamped to [-127, 127], zero point 0.  Weight matrices/kernels are
quantized; biases and layer-norm gains/shifts stay float32.  Inference is
hybrid: int8 storage, tensors dequantized at use, activations at 32 bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .epochs import LabeledEpoch
from .model import (
    FLAG_QUANTIZED,
    ArchConfig,
    ModelFormatError,
    ModelParams,
    expected_shapes,
    forward,
    read_slpm,
    write_slpm,
)


class QuantError(ValueError):
    pass


def _is_weight(name: str) -> bool:
    return name.endswith("_w") or (name.startswith("attn_w"))


@dataclass(frozen=True)
class QuantTensor:
    """int8 payload with its dequantization scale (zero point fixed at 0)."""

    values: np.ndarray  # int8
    scale: float
    shape: tuple[int, ...]

    def dequantize(self) -> np.ndarray:
        return (self.values.astype(np.float32) * np.float32(self.scale)).reshape(self.shape)


@dataclass(frozen=True)
class QuantModel:
    """Quantized weight tensors plus the float32 tensors kept as-is."""

    config: ArchConfig
    quantized: dict[str, QuantTensor]
    retained: dict[str, np.ndarray]

    def dequantize(self) -> ModelParams:
        tensors: dict[str, np.ndarray] = {}
        for name in expected_shapes(self.config):
            if name in self.quantized:
                tensors[name] = self.quantized[name].dequantize()
            else:
                tensors[name] = self.retained[name]
        return ModelParams(tensors)


def quantize_tensor(t: np.ndarray) -> QuantTensor:
    """Symmetric per-tensor int8; an all-zero tensor gets scale 1."""
    t = np.asarray(t)
    peak = float(np.max(np.abs(t))) if t.size else 0.0
    scale = peak / 127.0 if peak > 0 else 1.0
    q = np.clip(np.round(t / scale), -127, 127).astype(np.int8)
    return QuantTensor(values=q.reshape(-1), scale=scale, shape=t.shape)


def quantize_model(
    params: ModelParams, config: ArchConfig, calibration_set: list[LabeledEpoch]
) -> QuantModel:
    """Quantize every weight tensor; biases/gains/shifts stay float32.

    The calibration set must be non-empty; it is reserved for activation
    quantization and unused by the weight-only scheme.
    """
    if not calibration_set:
        raise QuantError("calibration set is empty")
    quantized: dict[str, QuantTensor] = {}
    retained: dict[str, np.ndarray] = {}
    for name, arr in params.tensors.items():
        if _is_weight(name):
            quantized[name] = quantize_tensor(arr)
        else:
            retained[name] = np.asarray(arr, dtype=np.float32)
    return QuantModel(config=config, quantized=quantized, retained=retained)


def quant_forward(qmodel: QuantModel, epoch_samples: np.ndarray) -> np.ndarray:
    """Hybrid inference: dequantize per tensor, compute at 32 bit."""
    probs, _ = forward(qmodel.dequantize(), epoch_samples, qmodel.config, mode="infer")
    return probs


def save_quant_model(qmodel: QuantModel, path) -> None:
    entries = []
    for name in expected_shapes(qmodel.config):
        if name in qmodel.quantized:
            qt = qmodel.quantized[name]
            entries.append((name, qt.values.reshape(qt.shape), qt.scale))
        else:
            entries.append((name, qmodel.retained[name], None))
    write_slpm(path, qmodel.config, entries, quantized=True)


def load_quant_model(path) -> QuantModel:
    config, flags, entries = read_slpm(path)
    if not flags & FLAG_QUANTIZED:
        raise ModelFormatError("file holds a float model, not a quantized one")
    shapes = expected_shapes(config)
    quantized: dict[str, QuantTensor] = {}
    retained: dict[str, np.ndarray] = {}
    for name, arr, scale in entries:
        if name not in shapes:
            raise ModelFormatError(f"unexpected tensor {name!r}")
        if arr.shape != shapes[name]:
            raise ModelFormatError(f"tensor {name}: shape {arr.shape} != {shapes[name]}")
        if scale is not None:
            quantized[name] = QuantTensor(values=arr.reshape(-1), scale=scale, shape=arr.shape)
        else:
            retained[name] = arr
    missing = set(shapes) - set(quantized) - set(retained)
    if missing:
        raise ModelFormatError(f"missing tensors: {sorted(missing)}")
    return QuantModel(config=config, quantized=quantized, retained=retained)


def load_any_model(path):
    """Dispatch on the quantized flag: returns ("float", params, config) or
    ("quant", qmodel, config)."""
    _, flags, _ = read_slpm(path)
    if flags & FLAG_QUANTIZED:
        qm = load_quant_model(path)
        return "quant", qm, qm.config
    from .model import load_model

    params, config = load_model(path)
    return "float", params, config
