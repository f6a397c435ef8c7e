"""Independent reference implementations used to check the package.

Nothing here imports the code under test beyond plain data types.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------- finite differences


def central_difference(f, arrays, index, h=1e-3):
    """d f(arrays) / d arrays[index] by central differences, element by element."""
    x = arrays[index]
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f(arrays)
        x[i] = orig - h
        fm = f(arrays)
        x[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b) -> float:
    """||a - b|| / max(||a||, ||b||), zero when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


# --------------------------------------------------------------- loop kernels


def naive_conv1d(x, w, bias=None):
    """SAME cross-correlation by explicit loops; extra pad for even K goes right."""
    B, C, L = x.shape
    O, _, K = w.shape
    left = (K - 1) // 2
    out = np.zeros((B, O, L))
    for b in range(B):
        for o in range(O):
            for t in range(L):
                s = 0.0
                for c in range(C):
                    for k in range(K):
                        j = t - left + k
                        if 0 <= j < L:
                            s += w[o, c, k] * x[b, c, j]
                out[b, o, t] = s + (0.0 if bias is None else bias[o])
    return out


def naive_maxpool1d(x, window):
    B, C, L = x.shape
    left = (window - 1) // 2
    out = np.empty_like(x, dtype=np.float64)
    for b, c, t in itertools.product(range(B), range(C), range(L)):
        lo, hi = max(0, t - left), min(L, t - left + window)
        out[b, c, t] = max(x[b, c, lo:hi])
    return out


# -------------------------------------------------------------------- metrics


def pairwise_auroc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(equal) over every positive/negative pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


# ----------------------------------------------------------------------- Adam


def adam_trace(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam recurrence written out longhand."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(theta)
    return out


# ------------------------------------------------------------------------ DSP


def tone_gain_db(process, freq_hz, fs, n, settle):
    """Output/input RMS ratio (dB) of a unit sine pushed through ``process``.

    ``settle`` output samples at each end are ignored to skip filter edges.
    """
    t = np.arange(n) / fs
    x = np.sin(2 * np.pi * freq_hz * t)
    y = np.asarray(process(x))[settle:-settle]
    return 20 * np.log10(np.sqrt(np.mean(y * y)) / np.sqrt(0.5))


def envelope_peaks(x, fs, smooth_s=0.02, min_gap_s=0.1, rel_height=0.3):
    """Peak picker on a rectified, moving-average envelope."""
    width = max(1, int(smooth_s * fs))
    env = np.convolve(np.abs(x), np.ones(width) / width, mode="same")
    thresh = rel_height * env.max()
    gap = int(min_gap_s * fs)
    peaks = []
    for i in range(1, len(env) - 1):
        if env[i] >= thresh and env[i] >= env[i - 1] and env[i] > env[i + 1]:
            if peaks and i - peaks[-1] < gap:
                if env[i] > env[peaks[-1]]:
                    peaks[-1] = i
                continue
            peaks.append(i)
    return peaks
