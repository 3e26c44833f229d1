"""Deterministic numeric kernels for every layer type the network uses.

Each kernel has a forward evaluation and a matching analytic gradient;
no autodiff framework is involved.  All kernels are pure functions over
numpy arrays and preserve the caller's dtype (float64 during training,
float32 on inference paths).  Outputs are checked finite: a NaN/Inf is a
hard error, never propagated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LAYER_NORM_EPS = 1e-5


class KernelError(ValueError):
    """Shape mismatch or domain violation in a kernel call."""


class NonFiniteError(KernelError):
    """A kernel produced NaN or Inf."""


def _finite(out: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return out


def conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid (unpadded) 1-D convolution.

    x: [L, Cin], w: [K, Cin, Cout], b: [Cout] -> [Lout, Cout] with
    Lout = floor((L - K) / stride) + 1 and
    out[t, co] = b[co] + sum_{k, ci} x[t*stride + k, ci] * w[k, ci, co].
    """
    L, cin = x.shape
    K, cin_w, cout = w.shape
    if cin != cin_w:
        raise KernelError(f"conv1d: input channels {cin} != weight channels {cin_w}")
    if b.shape != (cout,):
        raise KernelError(f"conv1d: bias shape {b.shape} != ({cout},)")
    if stride < 1:
        raise KernelError(f"conv1d: stride must be >= 1, got {stride}")
    if L < K:
        raise KernelError(f"conv1d: input length {L} shorter than kernel {K}")
    windows = sliding_window_view(x, K, axis=0)[::stride]  # [Lout, Cin, K] view
    out = np.einsum("tik,kio->to", windows, w, optimize=True) + b
    return _finite(out, "conv1d")


def conv1d_backward(
    x: np.ndarray, w: np.ndarray, stride: int, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv1d w.r.t. input, weights, and bias."""
    K = w.shape[0]
    windows = sliding_window_view(x, K, axis=0)[::stride]
    dw = np.einsum("tik,to->kio", windows, grad_out, optimize=True)
    db = grad_out.sum(axis=0)
    contrib = np.einsum("to,kio->tki", grad_out, w, optimize=True)
    dx = np.zeros_like(x)
    positions = np.arange(grad_out.shape[0]) * stride
    for k in range(K):
        # positions + k are distinct for fixed k, so fancy += is exact
        dx[positions + k] += contrib[:, k, :]
    return dx, dw, db


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map x @ w + b; x may carry a leading position axis [T, N]."""
    if x.shape[-1] != w.shape[0]:
        raise KernelError(f"dense: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise KernelError(f"dense: bias shape {b.shape} != ({w.shape[1]},)")
    return _finite(x @ w + b, "dense")


def dense_backward(
    x: np.ndarray, w: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dx = grad_out @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    return dx, x2.T @ g2, g2.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-stable softmax over the last axis; invariant under constant shifts."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return _finite(e / e.sum(axis=-1, keepdims=True), "softmax")


def softmax_backward(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    inner = (grad_out * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_out - inner)


def layer_norm(
    x: np.ndarray, gain: np.ndarray, shift: np.ndarray, eps: float = LAYER_NORM_EPS
) -> np.ndarray:
    """Per-position normalization of [T, D] over the D axis, then affine."""
    if x.ndim != 2 or x.shape[1] < 2:
        raise KernelError(f"layer_norm expects [T, D>=2], got {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return _finite(xhat * gain + shift, "layer_norm")


def layer_norm_backward(
    x: np.ndarray, gain: np.ndarray, grad_out: np.ndarray, eps: float = LAYER_NORM_EPS
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    dgain = (grad_out * xhat).sum(axis=0)
    dshift = grad_out.sum(axis=0)
    dxhat = grad_out * gain
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dshift


@dataclass
class AttentionCache:
    """Intermediates of one attention evaluation, kept for backprop."""

    x: np.ndarray
    q_h: np.ndarray  # [h, T, dh]
    k_h: np.ndarray
    v_h: np.ndarray
    attn: np.ndarray  # [h, T, T], rows sum to 1
    ctx: np.ndarray  # [T, D], heads re-merged, before output projection
    heads: int


def _split_heads(z: np.ndarray, heads: int) -> np.ndarray:
    T, D = z.shape
    return z.reshape(T, heads, D // heads).transpose(1, 0, 2)


def _merge_heads(z: np.ndarray) -> np.ndarray:
    h, T, dh = z.shape
    return z.transpose(1, 0, 2).reshape(T, h * dh)


def multi_head_attention_with_cache(
    x: np.ndarray,
    wq: np.ndarray,
    bq: np.ndarray,
    wk: np.ndarray,
    bk: np.ndarray,
    wv: np.ndarray,
    bv: np.ndarray,
    wo: np.ndarray,
    bo: np.ndarray,
    heads: int,
) -> tuple[np.ndarray, AttentionCache]:
    """Scaled dot-product self-attention over x: [T, D], D divisible by heads."""
    T, D = x.shape
    if D % heads != 0:
        raise KernelError(f"attention: width {D} not divisible by {heads} heads")
    dh = D // heads
    q_h = _split_heads(x @ wq + bq, heads)
    k_h = _split_heads(x @ wk + bk, heads)
    v_h = _split_heads(x @ wv + bv, heads)
    scores = q_h @ k_h.transpose(0, 2, 1) / np.sqrt(np.asarray(dh, dtype=x.dtype))
    attn = softmax(scores)
    ctx = _merge_heads(attn @ v_h)
    out = _finite(ctx @ wo + bo, "attention")
    return out, AttentionCache(x=x, q_h=q_h, k_h=k_h, v_h=v_h, attn=attn, ctx=ctx, heads=heads)


def multi_head_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, heads: int) -> np.ndarray:
    out, _ = multi_head_attention_with_cache(x, wq, bq, wk, bk, wv, bv, wo, bo, heads)
    return out


def multi_head_attention_backward(
    cache: AttentionCache,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    wo: np.ndarray,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Returns (dx, grads) with grads keyed wq/bq/wk/bk/wv/bv/wo/bo."""
    x, attn = cache.x, cache.attn
    dh = x.shape[1] // cache.heads
    scale = 1.0 / np.sqrt(np.asarray(dh, dtype=x.dtype))

    d_ctx = grad_out @ wo.T
    dwo = cache.ctx.T @ grad_out
    dbo = grad_out.sum(axis=0)

    d_ctx_h = _split_heads(d_ctx, cache.heads)
    d_attn = d_ctx_h @ cache.v_h.transpose(0, 2, 1)
    d_v_h = attn.transpose(0, 2, 1) @ d_ctx_h
    d_scores = softmax_backward(attn, d_attn)
    d_q_h = d_scores @ cache.k_h * scale
    d_k_h = d_scores.transpose(0, 2, 1) @ cache.q_h * scale

    dq = _merge_heads(d_q_h)
    dk = _merge_heads(d_k_h)
    dv = _merge_heads(d_v_h)
    grads = {
        "wq": x.T @ dq,
        "bq": dq.sum(axis=0),
        "wk": x.T @ dk,
        "bk": dk.sum(axis=0),
        "wv": x.T @ dv,
        "bv": dv.sum(axis=0),
        "wo": dwo,
        "bo": dbo,
    }
    dx = dq @ wq.T + dk @ wk.T + dv @ wv.T
    return dx, grads
