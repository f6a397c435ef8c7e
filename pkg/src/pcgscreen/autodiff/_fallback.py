"""Pure-numpy twins of the compiled kernels in ``_kernels.pyx``.

Same signatures and the same SAME-padding and tie-break conventions; used when
the extension is not built or ``PCGSCREEN_PURE=1`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, kernel_size, pad_left):
    B, C, L = x.shape
    xp = np.zeros((B, C, L + kernel_size - 1), dtype=x.dtype)
    xp[:, :, pad_left : pad_left + L] = x
    return xp


def conv1d_forward(x, w, pad_left):
    B, C, L = x.shape
    O, _, K = w.shape
    if K == 1:
        return np.matmul(w[:, :, 0], x)
    xp = _pad(x, K, pad_left)
    wmat = w.reshape(O, C * K)
    out = np.empty((B, O, L), dtype=x.dtype)
    for b in range(B):
        # (C, L, K) window view -> (L, C*K) columns
        cols = sliding_window_view(xp[b], K, axis=1).transpose(1, 0, 2).reshape(L, C * K)
        out[b] = wmat @ cols.T
    return out


def conv1d_grad_weight(x, g, kernel_size, pad_left):
    B, C, L = x.shape
    O = g.shape[1]
    K = kernel_size
    g2 = g.transpose(1, 0, 2).reshape(O, B * L)
    if K == 1:
        return (g2 @ x.transpose(1, 0, 2).reshape(C, B * L).T)[:, :, None]
    xp = _pad(x, K, pad_left)
    gw = np.empty((O, C, K), dtype=x.dtype)
    for k in range(K):
        shifted = xp[:, :, k : k + L].transpose(1, 0, 2).reshape(C, B * L)
        gw[:, :, k] = g2 @ shifted.T
    return gw


def maxpool1d_forward(x, window):
    B, C, L = x.shape
    pad_left = (window - 1) // 2
    xp = np.full((B, C, L + window - 1), -np.inf, dtype=x.dtype)
    xp[:, :, pad_left : pad_left + L] = x
    win = sliding_window_view(xp, window, axis=2)
    # argmax returns the first maximal index, matching the compiled tie rule
    arg = np.argmax(win, axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    idx = (arg + np.arange(L) - pad_left).astype(np.intp)
    return np.ascontiguousarray(out), idx


def maxpool1d_backward(g, idx):
    B, C, L = g.shape
    flat = (np.arange(B * C)[:, None] * L + idx.reshape(B * C, L)).ravel()
    gx = np.bincount(flat, weights=g.reshape(-1), minlength=B * C * L)
    return gx.astype(g.dtype, copy=False).reshape(B, C, L)
