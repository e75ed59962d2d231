"""Numpy fallback for the compiled kernels in ``_ckernels``.

Same signatures and results. ``np.einsum`` with ``optimize=False`` runs numpy's
own sum-of-products loops, so no BLAS library is called here either.
"""
import numpy as np


def _prepare(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    dtype = np.float32 if (a.dtype == np.float32 and b.dtype == np.float32) else np.float64
    a = np.ascontiguousarray(a, dtype=dtype)
    b = np.ascontiguousarray(b, dtype=dtype)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a, b


def matmul(a, b):
    a, b = _prepare(a, b)
    return np.einsum("ik,kj->ij", a, b, optimize=False)


def matmul_blocked(a, b, block=64):
    if block < 1:
        raise ValueError("block must be positive")
    a, b = _prepare(a, b)
    n, kk = a.shape
    m = b.shape[1]
    out = np.zeros((n, m), dtype=a.dtype)
    for i0 in range(0, n, block):
        for k0 in range(0, kk, block):
            at = a[i0:i0 + block, k0:k0 + block]
            for j0 in range(0, m, block):
                out[i0:i0 + block, j0:j0 + block] += np.einsum(
                    "ik,kj->ij", at, b[k0:k0 + block, j0:j0 + block], optimize=False
                )
    return out


def softmax_columns(e):
    e = np.asarray(e)
    dtype = np.float32 if e.dtype == np.float32 else np.float64
    e = np.asarray(e, dtype=dtype)
    if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
        raise ValueError(f"softmax_columns expects a non-empty matrix, got shape {e.shape}")
    z = np.exp(e - e.max(axis=0, keepdims=True))
    z *= 1.0 / z.sum(axis=0, keepdims=True)
    return z
