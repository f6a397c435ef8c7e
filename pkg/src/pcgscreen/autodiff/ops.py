"""Differentiable operations used by the inception network.

Layouts: sequences are ``(batch, channels, length)``, features ``(batch, features)``.
All convolutions and pools use SAME padding.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import NonDistribution, ShapeMismatch
from . import kernels
from .tensor import Tensor, record

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LOG_EPS = 1e-12


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _need(t: Tensor) -> bool:
    return t.requires_grad


def _channel_sum(a: np.ndarray) -> np.ndarray:
    """Sum over every axis except channels (axis 1)."""
    return a.sum(axis=2).sum(axis=0) if a.ndim == 3 else a.sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    return record(a.data + b.data, (a, b), "add", lambda g: (g, g))


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation with SAME padding: (B, Cin, L) * (Cout, Cin, K) -> (B, Cout, L)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv1d: input {x.shape}, weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeMismatch(f"conv1d: bias {bias.shape} for {w.shape[0]} filters")
    out = kernels.conv1d_forward(x.data, w.data.astype(x.dtype, copy=False))
    if bias is not None:
        out += bias.data[None, :, None]
    K = w.shape[2]

    def vjp(g):
        gx = kernels.conv1d_grad_input(g, w.data.astype(g.dtype, copy=False)) if _need(x) else None
        gw = kernels.conv1d_grad_weight(x.data, g, K) if _need(w) else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    inputs = (x, w) if bias is None else (x, w, bias)
    return record(out, inputs, "conv1d", vjp)


def maxpool1d(x: Tensor, window: int = 3) -> Tensor:
    """Stride-1 max pool, SAME padding by -inf; gradient goes to the first argmax."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"maxpool1d expects (B, C, L), got {x.shape}")
    if window < 1:
        raise ValueError("window must be >= 1")
    out, idx = kernels.maxpool1d_forward(x.data, window)
    return record(out, (x,), "maxpool1d", lambda g: (kernels.maxpool1d_backward(g, idx),))


def global_avg_pool(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"global_avg_pool expects (B, C, L), got {x.shape}")
    L = x.shape[2]

    def vjp(g):
        return (np.repeat(g[:, :, None] / L, L, axis=2),)

    return record(x.data.mean(axis=2), (x,), "global_avg_pool", vjp)


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalization over batch (and length for 3-D input).

    In training the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    x = _as_tensor(x)
    C = x.shape[1] if x.ndim >= 2 else -1
    if x.ndim not in (2, 3) or gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatch(f"batchnorm1d: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if running_mean.shape != (C,) or running_var.shape != (C,):
        raise ShapeMismatch("batchnorm1d: running statistics do not match channel count")
    axes = (0, 2) if x.ndim == 3 else (0,)
    bshape = (1, C, 1) if x.ndim == 3 else (1, C)
    n = x.data.size // C

    if training:
        mean = _channel_sum(x.data) / n
        centered = x.data - mean.reshape(bshape)
        var = _channel_sum(centered * centered) / n
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
        centered = x.data - mean.reshape(bshape)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat = centered
    xhat *= inv_std.reshape(bshape)
    gam = gamma.data.astype(x.dtype, copy=False)
    out = xhat * gam.reshape(bshape)
    out += beta.data.astype(x.dtype, copy=False).reshape(bshape)

    def vjp(g):
        dbeta = _channel_sum(g)
        dgamma = _channel_sum(g * xhat)
        dx = None
        if _need(x):
            scale = (inv_std * gam).reshape(bshape)
            if training:
                # d/dx of gamma * (x - mean) / std with batch statistics, reusing the
                # gamma/beta reductions: scale * (g - mean(g) - xhat * mean(g * xhat))
                dx = xhat * (dgamma / n).reshape(bshape)
                np.subtract(g, dx, out=dx)
                dx -= (dbeta / n).reshape(bshape)
                dx *= scale
            else:
                dx = g * scale
        return dx, (dgamma if _need(gamma) else None), (dbeta if _need(beta) else None)

    return record(out, (x, gamma, beta), "batchnorm1d", vjp)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """(B, F) @ (F, K) + (K,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"dense: input {x.shape}, weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeMismatch(f"dense: bias {b.shape} for {w.shape[1]} outputs")
    out = x.data @ w.data.astype(x.dtype, copy=False)
    if b is not None:
        out = out + b.data

    def vjp(g):
        gx = g @ w.data.T if _need(x) else None
        gw = x.data.T @ g if _need(w) else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return record(out, (x, w) if b is None else (x, w, b), "dense", vjp)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)

    def vjp(g):
        return (g * (out > 0),)

    return record(out, (x,), "relu", vjp)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return record(s, (x,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the class axis of a (B, K) tensor."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeMismatch(f"softmax expects (B, K), got {x.shape}")
    e = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return record(s, (x,), "softmax", vjp)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat_channels needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeMismatch(f"concat_channels: {ref} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=1)

    def vjp(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return record(out, tuple(tensors), "concat_channels", vjp)


def binary_to_two_class(p: Tensor) -> Tensor:
    """Map a (B, 1) positive-class probability to (B, 2) as [1 - p, p]."""
    p = _as_tensor(p)
    if p.ndim != 2 or p.shape[1] != 1:
        raise ShapeMismatch(f"expected (B, 1) probabilities, got {p.shape}")
    out = np.concatenate([1.0 - p.data, p.data], axis=1)
    return record(out, (p,), "binary_to_two_class", lambda g: (g[:, 1:] - g[:, :1],))


def weighted_cce(probs: Tensor, targets: np.ndarray, class_weights) -> Tensor:
    """Class-weighted categorical cross-entropy, averaged over the batch.

    loss = -(1/B) * sum_b sum_k w_k * t_bk * log(p_bk + 1e-12)
    """
    probs = _as_tensor(probs)
    t = np.asarray(targets, dtype=probs.dtype)
    w = np.asarray(class_weights, dtype=probs.dtype)
    if probs.ndim != 2 or t.shape != probs.shape or w.shape != (probs.shape[1],):
        raise ShapeMismatch(f"weighted_cce: probs {probs.shape}, targets {t.shape}, weights {w.shape}")
    if np.any(w <= 0):
        raise ValueError("class weights must be positive")
    sums = probs.data.sum(axis=1, dtype=np.float64)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(probs.data < 0):
        raise NonDistribution("probability rows must be non-negative and sum to 1")
    B = probs.shape[0]
    wt = t * w[None, :]
    loss = -np.sum(wt * np.log(probs.data + LOG_EPS)) / B

    def vjp(g):
        return (-g * wt / (probs.data + LOG_EPS) / B,)

    return record(np.asarray(loss, dtype=probs.dtype), (probs,), "weighted_cce", vjp)
