# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv1d / maxpool1d kernels (SAME padding, batch x channel x length)."""

import numpy as np

from libc.stdlib cimport free, malloc
from libc.string cimport memcpy, memset

ctypedef fused real:
    float
    double

cdef extern from "conv_impl.h" nogil:
    void pcg_conv_fwd_f32(const float* xp, const float* w, float* out,
                          Py_ssize_t C, Py_ssize_t O, Py_ssize_t K, Py_ssize_t L)
    void pcg_conv_fwd_f64(const double* xp, const double* w, double* out,
                          Py_ssize_t C, Py_ssize_t O, Py_ssize_t K, Py_ssize_t L)
    void pcg_conv_gradw_f32(const float* xp, const float* g, float* gw,
                            Py_ssize_t C, Py_ssize_t O, Py_ssize_t K, Py_ssize_t L)
    void pcg_conv_gradw_f64(const double* xp, const double* g, double* gw,
                            Py_ssize_t C, Py_ssize_t O, Py_ssize_t K, Py_ssize_t L)


cdef void _pad_rows(const real* src, real* dst, Py_ssize_t C, Py_ssize_t L,
                    Py_ssize_t K, Py_ssize_t pl) noexcept nogil:
    cdef Py_ssize_t c, LP = L + K - 1
    memset(dst, 0, C * LP * sizeof(real))
    for c in range(C):
        memcpy(dst + c * LP + pl, src + c * L, L * sizeof(real))


def conv1d_forward(const real[:, :, ::1] x, const real[:, :, ::1] w, Py_ssize_t pad_left):
    dtype = np.float32 if real is float else np.float64
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2], b
    out = np.empty((B, O, L), dtype=dtype)
    cdef real[:, :, ::1] ov = out
    cdef real* xp = <real*>malloc(C * (L + K - 1) * sizeof(real))
    if xp == NULL:
        raise MemoryError()
    with nogil:
        for b in range(B):
            _pad_rows(&x[b, 0, 0], xp, C, L, K, pad_left)
            if real is float:
                pcg_conv_fwd_f32(xp, &w[0, 0, 0], &ov[b, 0, 0], C, O, K, L)
            else:
                pcg_conv_fwd_f64(xp, &w[0, 0, 0], &ov[b, 0, 0], C, O, K, L)
    free(xp)
    return out


def conv1d_grad_weight(const real[:, :, ::1] x, const real[:, :, ::1] g,
                       Py_ssize_t kernel_size, Py_ssize_t pad_left):
    dtype = np.float32 if real is float else np.float64
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t O = g.shape[1], K = kernel_size, b
    gw = np.zeros((O, C, K), dtype=dtype)
    cdef real[:, :, ::1] gv = gw
    cdef real* xp = <real*>malloc(C * (L + K - 1) * sizeof(real))
    if xp == NULL:
        raise MemoryError()
    with nogil:
        for b in range(B):
            _pad_rows(&x[b, 0, 0], xp, C, L, K, pad_left)
            if real is float:
                pcg_conv_gradw_f32(xp, &g[b, 0, 0], &gv[0, 0, 0], C, O, K, L)
            else:
                pcg_conv_gradw_f64(xp, &g[b, 0, 0], &gv[0, 0, 0], C, O, K, L)
    free(xp)
    return gw


def maxpool1d_forward(const real[:, :, ::1] x, Py_ssize_t window):
    dtype = np.float32 if real is float else np.float64
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t pl = (window - 1) // 2
    out = np.empty((B, C, L), dtype=dtype)
    idx = np.empty((B, C, L), dtype=np.intp)
    cdef real[:, :, ::1] ov = out
    cdef Py_ssize_t[:, :, ::1] iv = idx
    cdef Py_ssize_t b, c, t, j, lo, hi, best_j
    cdef real best
    with nogil:
        for b in range(B):
            for c in range(C):
                for t in range(L):
                    lo = t - pl
                    if lo < 0:
                        lo = 0
                    hi = t - pl + window
                    if hi > L:
                        hi = L
                    best_j = lo
                    best = x[b, c, lo]
                    for j in range(lo + 1, hi):
                        # strict '>' keeps the first index on ties
                        if x[b, c, j] > best:
                            best = x[b, c, j]
                            best_j = j
                    ov[b, c, t] = best
                    iv[b, c, t] = best_j
    return out, idx


def maxpool1d_backward(const real[:, :, ::1] g, const Py_ssize_t[:, :, ::1] idx):
    dtype = np.float32 if real is float else np.float64
    cdef Py_ssize_t B = g.shape[0], C = g.shape[1], L = g.shape[2]
    gx = np.zeros((B, C, L), dtype=dtype)
    cdef real[:, :, ::1] gv = gx
    cdef Py_ssize_t b, c, t
    with nogil:
        for b in range(B):
            for c in range(C):
                for t in range(L):
                    gv[b, c, idx[b, c, t]] += g[b, c, t]
    return gx
