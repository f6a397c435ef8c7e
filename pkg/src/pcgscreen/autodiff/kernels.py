"""Backend selection for the hot conv/pool kernels.

The compiled extension is used when importable; ``PCGSCREEN_PURE=1`` forces the
numpy fallback. ``BACKEND`` names the active choice.
"""

import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("PCGSCREEN_PURE"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _impl

    BACKEND = "compiled"
except ImportError:
    _impl = _fallback
    BACKEND = "numpy"


def same_padding(kernel_size):
    """(left, right) zero padding that keeps length; the odd extra goes right."""
    left = (kernel_size - 1) // 2
    return left, kernel_size - 1 - left


def _c(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def conv1d_forward(x, w, impl=None):
    impl = impl or _impl
    dtype = x.dtype
    left, _ = same_padding(w.shape[2])
    return impl.conv1d_forward(_c(x, dtype), _c(w, dtype), left)


def conv1d_grad_input(g, w, impl=None):
    # correlation with the channel-transposed, time-reversed kernel and mirrored padding
    impl = impl or _impl
    dtype = g.dtype
    _, right = same_padding(w.shape[2])
    wt = w[:, :, ::-1].transpose(1, 0, 2)
    return impl.conv1d_forward(_c(g, dtype), _c(wt, dtype), right)


def conv1d_grad_weight(x, g, kernel_size, impl=None):
    impl = impl or _impl
    dtype = x.dtype
    left, _ = same_padding(kernel_size)
    return impl.conv1d_grad_weight(_c(x, dtype), _c(g, dtype), kernel_size, left)


def maxpool1d_forward(x, window, impl=None):
    impl = impl or _impl
    return impl.maxpool1d_forward(_c(x, x.dtype), window)


def maxpool1d_backward(g, idx, impl=None):
    impl = impl or _impl
    return impl.maxpool1d_backward(_c(g, g.dtype), np.ascontiguousarray(idx, dtype=np.intp))
