# cython: language_level=3
"""Compiled inner loops: dense matmul (plain and blocked) and column softmax.

All kernels take 2-D arrays, work in the input precision (float32 or float64)
and return freshly allocated C-contiguous arrays. No BLAS is involved.
"""
import numpy as np

cimport cython
from cython cimport floating
from libc.math cimport exp


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _mm(const floating[:, ::1] a, const floating[:, ::1] b, floating[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], kk = a.shape[1], m = b.shape[1]
    cdef Py_ssize_t i, k, j
    cdef floating aik
    # i-k-j order keeps the innermost loop streaming over contiguous rows of b and out
    for i in range(n):
        for k in range(kk):
            aik = a[i, k]
            for j in range(m):
                out[i, j] += aik * b[k, j]


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _mm_blocked(const floating[:, ::1] a, const floating[:, ::1] b, floating[:, ::1] out,
                      Py_ssize_t bs) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], kk = a.shape[1], m = b.shape[1]
    cdef Py_ssize_t i0, k0, j0, i, k, j, i1, k1, j1
    cdef floating aik
    i0 = 0
    while i0 < n:
        i1 = min(i0 + bs, n)
        k0 = 0
        while k0 < kk:
            k1 = min(k0 + bs, kk)
            j0 = 0
            while j0 < m:
                j1 = min(j0 + bs, m)
                for i in range(i0, i1):
                    for k in range(k0, k1):
                        aik = a[i, k]
                        for j in range(j0, j1):
                            out[i, j] += aik * b[k, j]
                j0 += bs
            k0 += bs
        i0 += bs


def _prepare(a, b):
    dtype = np.result_type(a, b, np.float32)
    if dtype != np.float32:
        dtype = np.float64
    a = np.ascontiguousarray(a, dtype=dtype)
    b = np.ascontiguousarray(b, dtype=dtype)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a, b, np.zeros((a.shape[0], b.shape[1]), dtype=dtype)


def matmul(a, b):
    a, b, out = _prepare(a, b)
    if out.dtype == np.float32:
        _mm[float](a, b, out)
    else:
        _mm[double](a, b, out)
    return out


def matmul_blocked(a, b, Py_ssize_t block=64):
    if block < 1:
        raise ValueError("block must be positive")
    a, b, out = _prepare(a, b)
    if out.dtype == np.float32:
        _mm_blocked[float](a, b, out, block)
    else:
        _mm_blocked[double](a, b, out, block)
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _softmax_cols(const floating[:, ::1] e, floating[:, ::1] out,
                        floating[::1] colmax, floating[::1] colsum) noexcept nogil:
    cdef Py_ssize_t n = e.shape[0], m = e.shape[1]
    cdef Py_ssize_t i, j
    cdef floating v
    # column maxima and sums are accumulated row by row so that memory is read contiguously
    for j in range(m):
        colmax[j] = e[0, j]
    for i in range(1, n):
        for j in range(m):
            if e[i, j] > colmax[j]:
                colmax[j] = e[i, j]
    for i in range(n):
        for j in range(m):
            v = exp(e[i, j] - colmax[j])
            out[i, j] = v
            colsum[j] += v
    for j in range(m):
        colsum[j] = 1.0 / colsum[j]
    for i in range(n):
        for j in range(m):
            out[i, j] *= colsum[j]


def softmax_columns(e):
    e = np.asarray(e)
    dtype = np.float32 if e.dtype == np.float32 else np.float64
    e = np.ascontiguousarray(e, dtype=dtype)
    if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
        raise ValueError(f"softmax_columns expects a non-empty matrix, got shape {e.shape}")
    out = np.empty_like(e)
    colmax = np.empty(e.shape[1], dtype=dtype)
    colsum = np.zeros(e.shape[1], dtype=dtype)
    if dtype == np.float32:
        _softmax_cols[float](e, out, colmax, colsum)
    else:
        _softmax_cols[double](e, out, colmax, colsum)
    return out
