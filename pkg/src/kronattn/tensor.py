"""Dense matrix and rank-3 tensor primitives.

Layout conventions
------------------
A *Matrix* is a 2-D ``numpy.ndarray`` of shape ``(rows, cols)``.
A *Tensor3* is a 3-D ``numpy.ndarray`` of shape ``(h, w, c)``: height, width,
channels. ``t[:, :, k]`` is the k-th frontal slice (feature map),
``t[i, :, :]`` a horizontal slice and ``t[:, j, :]`` a lateral slice.

``vec`` concatenates the columns of a matrix, so the mode-3 unfolding of
``t`` is the ``c x hw`` matrix whose entry ``[k, j*h + i]`` is ``t[i, j, k]``.
Every fold/unfold convention in the package derives from this one.

All functions are pure: inputs are never modified, outputs are new arrays in
float64 unless a float32 input is passed to a kernel that supports it.
"""
from __future__ import annotations

import numpy as np

from ._backend import kernels


class ShapeError(ValueError):
    """Raised when array dimensions do not fit an operation."""


def as_matrix(m, name="matrix") -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    return m


def as_tensor3(t, name="tensor") -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3 or min(t.shape) < 1:
        raise ShapeError(f"{name} must be a non-empty (h, w, c) array, got shape {t.shape}")
    return t


def _as_vector(v, name) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ShapeError(f"{name} must be a non-empty 1-D array, got shape {v.shape}")
    return v


def vec(m) -> np.ndarray:
    """Stack the columns of ``m`` into one vector."""
    return as_matrix(m).T.reshape(-1).copy()


def unfold_mode3(t) -> np.ndarray:
    """Mode-3 unfolding: ``(h, w, c)`` tensor to ``c x hw`` matrix.

    Row ``k`` is ``vec(t[:, :, k])``.
    """
    t = as_tensor3(t)
    h, w, c = t.shape
    return np.ascontiguousarray(t.transpose(2, 1, 0).reshape(c, w * h))


def fold_mode3(m, h: int, w: int) -> np.ndarray:
    """Inverse of :func:`unfold_mode3`; columns of ``m`` become mode-3 fibers."""
    m = as_matrix(m)
    if h < 1 or w < 1 or m.shape[1] != h * w:
        raise ShapeError(f"cannot fold a {m.shape[0]}x{m.shape[1]} matrix into {h}x{w} slices")
    return np.ascontiguousarray(m.reshape(m.shape[0], w, h).transpose(2, 1, 0))


def horizontal_mean(t) -> np.ndarray:
    """Average of the horizontal slices, a ``w x c`` matrix."""
    return as_tensor3(t).mean(axis=0)


def lateral_mean(t) -> np.ndarray:
    """Average of the lateral slices, an ``h x c`` matrix."""
    return as_tensor3(t).mean(axis=1)


def juxtapose_context(t) -> np.ndarray:
    """Context matrix ``[H^T, L^T]`` of shape ``c x (w + h)``.

    The first ``w`` columns come from the horizontal average (one per width
    position), the last ``h`` columns from the lateral average.
    """
    t = as_tensor3(t)
    return np.ascontiguousarray(np.concatenate([horizontal_mean(t).T, lateral_mean(t).T], axis=1))


def outer_sum(u, v) -> np.ndarray:
    """``u 1^T + 1 v^T``, i.e. ``M[i, j] = u[i] + v[j]``."""
    u = _as_vector(u, "u")
    v = _as_vector(v, "v")
    return u[:, None] + v[None, :]


def kronecker_product(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    (ra, ca), (rb, cb) = a.shape, b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(ra * rb, ca * cb)


def kronecker_sum(omega, psi) -> np.ndarray:
    """``omega (x) I_n + I_m (x) psi`` for square ``omega`` (m x m) and ``psi`` (n x n)."""
    omega = as_matrix(omega, "omega")
    psi = as_matrix(psi, "psi")
    if omega.shape[0] != omega.shape[1] or psi.shape[0] != psi.shape[1]:
        raise ShapeError(f"kronecker_sum needs square factors, got {omega.shape} and {psi.shape}")
    m, n = omega.shape[0], psi.shape[0]
    return kronecker_product(omega, np.eye(n)) + kronecker_product(np.eye(m), psi)


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return kernels.matmul(a, b)


def matmul_blocked(a, b, block: int = 64) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return kernels.matmul_blocked(a, b, block)


def softmax_columns(m) -> np.ndarray:
    """Column-wise softmax with per-column max subtraction."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"softmax_columns expects a non-empty matrix, got shape {m.shape}")
    return kernels.softmax_columns(m)


def trace(m) -> float:
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"trace of non-square matrix {m.shape}")
    return float(np.trace(m))


def pooled_size(n: int, size: int = 2) -> int:
    return -(-n // size)


def avg_pool(t, size: int = 2) -> np.ndarray:
    """Average pooling over the two spatial axes, kernel = stride = ``size``.

    Works on ``(h, w, c)`` or batched ``(..., h, w, c)`` arrays. Ceil mode:
    partial windows at the bottom/right edge are averaged over the entries
    they actually contain.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 3:
        raise ShapeError(f"avg_pool expects (..., h, w, c), got shape {t.shape}")
    h, w = t.shape[-3], t.shape[-2]
    ho, wo = pooled_size(h, size), pooled_size(w, size)
    out = np.zeros(t.shape[:-3] + (ho, wo, t.shape[-1]))
    for di in range(size):
        for dj in range(size):
            part = t[..., di::size, dj::size, :]
            out[..., : part.shape[-3], : part.shape[-2], :] += part
    return out / pool_counts(h, w, size)[:, :, None]


def pool_counts(h: int, w: int, size: int = 2) -> np.ndarray:
    """Number of input entries in each ceil-mode pooling window."""
    rows = np.minimum(size, h - size * np.arange(pooled_size(h, size)))
    cols = np.minimum(size, w - size * np.arange(pooled_size(w, size)))
    return np.outer(rows, cols).astype(np.float64)
