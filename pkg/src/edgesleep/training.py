"""From-scratch training: cross-entropy, full backprop, Adam, subject folds.

Everything is deterministic given (seed, data): batches are drawn from a
seeded generator, gradients reduce in fixed order, and the optimizer is
purely functional (params in, params out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .epochs import LabeledEpoch, standardize
from .model import ArchConfig, ForwardCache, ModelParams, forward, init_params

PROB_FLOOR = 1e-12


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 30
    seed: int = 0
    validation_fraction: float = 0.10

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1/beta2 must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AdamState:
    """First/second moment estimates per tensor plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={n: np.zeros_like(a) for n, a in params.tensors.items()},
            v={n: np.zeros_like(a) for n, a in params.tensors.items()},
        )


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[int, ...], ...]

    def test_subjects(self, fold_index: int) -> set[int]:
        return set(self.folds[fold_index])


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """Negative log-likelihood of the true class, floored at 1e-12."""
    return float(-np.log(max(float(probs[int(label)]), PROB_FLOOR)))


def backprop(
    params: ModelParams, config: ArchConfig, cache: ForwardCache, label: int
) -> dict[str, np.ndarray]:
    """Exact gradient of cross_entropy(forward(x)) w.r.t. every tensor.

    Softmax and cross-entropy fuse to (probs - onehot) at the logits.
    """
    if cache is None or cache.probs is None:
        raise TrainingError("backprop needs the cache from a train-mode forward")
    dlogits = cache.probs.copy()
    dlogits[int(label)] -= 1.0

    grads: dict[str, np.ndarray] = {}
    dflat, grads["cls_w"], grads["cls_b"] = kernels.dense_backward(
        cache.flat, params["cls_w"], dlogits
    )
    dresid2 = dflat.reshape(cache.resid2.shape)

    # feed-forward sublayer: resid2 = resid1 + ffn(norm2(resid1))
    dhidden, grads["ffn2_w"], grads["ffn2_b"] = kernels.dense_backward(
        cache.ffn_hidden, params["ffn2_w"], dresid2
    )
    dpreact = kernels.relu_backward(cache.ffn_preact, dhidden)
    dnormed2, grads["ffn1_w"], grads["ffn1_b"] = kernels.dense_backward(
        cache.normed2, params["ffn1_w"], dpreact
    )
    dresid1_ln, grads["ln2_gain"], grads["ln2_shift"] = kernels.layer_norm_backward(
        cache.resid1, params["ln2_gain"], dnormed2
    )
    dresid1 = dresid2 + dresid1_ln

    # attention sublayer: resid1 = features + attn(norm1(features))
    dnormed1, attn_grads = kernels.multi_head_attention_backward(
        cache.attn,
        params["attn_wq"], params["attn_wk"], params["attn_wv"], params["attn_wo"],
        dresid1,
    )
    for short, grad in attn_grads.items():
        grads[f"attn_{short}"] = grad
    dfeatures_ln, grads["ln1_gain"], grads["ln1_shift"] = kernels.layer_norm_backward(
        cache.features, params["ln1_gain"], dnormed1
    )
    dfeatures = dresid1 + dfeatures_ln

    g = dfeatures
    strides = [s for _, s, _ in config.scaled_conv_table]
    for i in range(len(strides), 0, -1):
        dz = kernels.relu_backward(cache.conv_preacts[i - 1], g)
        g, grads[f"conv{i}_w"], grads[f"conv{i}_b"] = kernels.conv1d_backward(
            cache.conv_inputs[i - 1], params[f"conv{i}_w"], strides[i - 1], dz
        )
    return grads


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
    trainable: set[str] | None = None,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; frozen tensors pass through untouched."""
    t = state.t + 1
    new_tensors: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, theta in params.tensors.items():
        if trainable is not None and name not in trainable:
            new_tensors[name] = theta
            new_m[name] = state.m[name]
            new_v[name] = state.v[name]
            continue
        g = grads[name]
        m = config.beta1 * state.m[name] + (1 - config.beta1) * g
        v = config.beta2 * state.v[name] + (1 - config.beta2) * g * g
        m_hat = m / (1 - config.beta1**t)
        v_hat = v / (1 - config.beta2**t)
        new_tensors[name] = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        new_m[name] = m
        new_v[name] = v
    return ModelParams(new_tensors), AdamState(m=new_m, v=new_v, t=t)


def make_folds(subject_ids: list[int], k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle subjects, then split into k contiguous chunks of ceil(n/k).

    The ceil chunking puts the shortfall entirely in the last fold (77
    subjects at k=5 gives 16/16/16/16/13); when that would leave a fold
    empty, the split falls back to near-equal sizes.
    """
    n = len(subject_ids)
    if k > n:
        raise TrainingError(f"cannot make {k} folds from {n} subjects")
    rng = np.random.default_rng(seed)
    order = [subject_ids[i] for i in rng.permutation(n)]
    chunk = math.ceil(n / k)
    if (k - 1) * chunk >= n:
        parts = np.array_split(np.asarray(order), k)
        folds = tuple(tuple(int(s) for s in part) for part in parts)
    else:
        folds = tuple(tuple(order[i * chunk : (i + 1) * chunk]) for i in range(k))
    return FoldPlan(folds=folds)


def _prepare(epochs: list[LabeledEpoch]) -> tuple[list[np.ndarray], np.ndarray]:
    xs = [standardize(e.samples) for e in epochs]
    ys = np.array([int(e.stage) for e in epochs], dtype=np.int64)
    return xs, ys


def _evaluate(params, config, xs, ys) -> tuple[float, float]:
    if not xs:
        return float("nan"), float("nan")
    loss = 0.0
    correct = 0
    for x, y in zip(xs, ys):
        probs, _ = forward(params, x, config, mode="infer")
        loss += cross_entropy(probs, y)
        correct += int(np.argmax(probs) == y)
    return loss / len(xs), correct / len(xs)


def evaluate_epochs(
    params: ModelParams, config: ArchConfig, epochs: list[LabeledEpoch]
) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) over standardized epochs."""
    return _evaluate(params, config, *_prepare(epochs))


def batch_gradients(
    params: ModelParams,
    config: ArchConfig,
    xs: list[np.ndarray],
    ys: np.ndarray,
) -> tuple[dict[str, np.ndarray], float]:
    """Mean gradient and mean loss over one mini-batch, reduced in order."""
    total: dict[str, np.ndarray] | None = None
    loss = 0.0
    for x, y in zip(xs, ys):
        probs, cache = forward(params, x, config, mode="train")
        loss += cross_entropy(probs, y)
        grads = backprop(params, config, cache, y)
        if total is None:
            total = grads
        else:
            for name in total:
                total[name] += grads[name]
    scale = 1.0 / len(xs)
    for name in total:
        total[name] *= scale
    return total, loss * scale


def fit(
    params: ModelParams,
    config: ArchConfig,
    train_epochs: list[LabeledEpoch],
    val_epochs: list[LabeledEpoch],
    tc: TrainConfig,
    trainable: set[str] | None = None,
) -> tuple[ModelParams, list[EpochStats]]:
    """Mini-batch Adam over the training set.

    Batches reshuffle every epoch from a generator seeded by tc.seed; the
    final incomplete batch is used, not dropped.  Returns the parameters of
    the best-validation-accuracy epoch (the last epoch when there is no
    validation set) plus the per-epoch history.
    """
    if not train_epochs:
        raise TrainingError("empty training set")
    xs, ys = _prepare(train_epochs)
    val_xs, val_ys = _prepare(val_epochs)
    rng = np.random.default_rng(tc.seed)
    state = AdamState.zeros_like(params)
    history: list[EpochStats] = []
    best_params = params
    best_acc = -1.0
    for epoch in range(tc.max_epochs):
        order = rng.permutation(len(xs))
        running = 0.0
        for start in range(0, len(order), tc.batch_size):
            batch = order[start : start + tc.batch_size]
            grads, batch_loss = batch_gradients(
                params, config, [xs[i] for i in batch], ys[batch]
            )
            running += batch_loss * len(batch)
            params, state = adam_step(params, grads, state, tc, trainable)
        val_loss, val_acc = _evaluate(params, config, val_xs, val_ys)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=running / len(xs),
                val_loss=val_loss,
                val_acc=val_acc,
            )
        )
        if val_xs and val_acc > best_acc:
            best_acc = val_acc
            best_params = params.copy()
    if not val_xs:
        best_params = params
    return best_params, history


def split_train_val(
    pool: list[LabeledEpoch], tc: TrainConfig
) -> tuple[list[LabeledEpoch], list[LabeledEpoch]]:
    """Seeded-shuffle split; validation takes round(validation_fraction * n)."""
    rng = np.random.default_rng(tc.seed)
    order = rng.permutation(len(pool))
    n_val = round(tc.validation_fraction * len(pool))
    val = [pool[i] for i in order[:n_val]]
    train = [pool[i] for i in order[n_val:]]
    return train, val


def train_fold(
    epochs: list[LabeledEpoch],
    test_subjects: set[int],
    arch: ArchConfig,
    tc: TrainConfig,
) -> tuple[ModelParams, list[EpochStats]]:
    """Train on everything outside the held-out subjects.

    Non-test epochs split 90/10 into train/validation by a seeded shuffle;
    no epoch of a test subject is seen in either part.
    """
    pool = [e for e in epochs if e.subject_id not in test_subjects]
    if not pool:
        raise TrainingError("no training epochs outside the test subjects")
    train, val = split_train_val(pool, tc)
    if not train:
        raise TrainingError("validation split consumed every epoch")
    params = init_params(arch, tc.seed)
    return fit(params, arch, train, val, tc)


def history_to_csv(history: list[EpochStats]) -> str:
    lines = ["epoch,train_loss,val_loss,val_acc"]
    for h in history:
        lines.append(f"{h.epoch},{h.train_loss:.6f},{h.val_loss:.6f},{h.val_acc:.6f}")
    return "\n".join(lines) + "\n"
