"""Matrix-variate normal with outer-sum mean and diagonal Kronecker-sum covariance.

A draw ``X`` (``h x w``) has mean ``mu 1^T + 1 upsilon^T`` and covariance
``Omega (+) Psi`` over the row-major vectorization ``vec(X^T)``. With diagonal
factors the entries are independent and entry ``(i, j)`` has variance
``Omega_ii + Psi_jj``, the ``(i*w + j)``-th diagonal entry of the Kronecker sum.

Averaging rows or columns of such a draw gives the multivariate normals
returned by :func:`row_average_marginal` and :func:`col_average_marginal`;
summing ``h`` independent row-average draws (as rows) and ``w`` column-average
draws (as columns) gives :func:`reconstruct`, whose law is
:func:`reconstruction_distribution`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .tensor import ShapeError, kronecker_sum, outer_sum, trace


def _positive_vector(v, name):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ShapeError(f"{name} must be a non-empty vector, got shape {v.shape}")
    if not np.all(v > 0):
        raise ValueError(f"{name} entries must be strictly positive")
    return v


@dataclass(frozen=True)
class MatrixNormalKS:
    mu: np.ndarray
    upsilon: np.ndarray
    omega_diag: np.ndarray
    psi_diag: np.ndarray

    def __post_init__(self):
        for name in ("mu", "upsilon"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.ndim != 1 or v.size < 1:
                raise ShapeError(f"{name} must be a non-empty vector, got shape {v.shape}")
            object.__setattr__(self, name, v)
        for name in ("omega_diag", "psi_diag"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.ndim != 1:
                # dense factors are not supported; only their diagonals are stored
                raise ShapeError(f"{name} must be a vector of diagonal entries, got shape {v.shape}")
            object.__setattr__(self, name, _positive_vector(v, name))
        if self.omega_diag.size != self.mu.size:
            raise ShapeError("omega_diag must have the same length as mu")
        if self.psi_diag.size != self.upsilon.size:
            raise ShapeError("psi_diag must have the same length as upsilon")

    @property
    def h(self) -> int:
        return self.mu.size

    @property
    def w(self) -> int:
        return self.upsilon.size

    @property
    def mean(self) -> np.ndarray:
        return outer_sum(self.mu, self.upsilon)

    @property
    def entry_variance(self) -> np.ndarray:
        return self.omega_diag[:, None] + self.psi_diag[None, :]

    def covariance(self) -> np.ndarray:
        """Dense ``hw x hw`` covariance ``Omega (+) Psi`` (small sizes only)."""
        return kronecker_sum(np.diag(self.omega_diag), np.diag(self.psi_diag))


@dataclass(frozen=True)
class MarginalSpec:
    """Diagonal multivariate normal for a row- or column-average vector.

    ``mean_avg`` and ``var_avg`` hold the scalar averages (of mu and Omega for
    rows, of upsilon and Psi for columns) that enter the formulas.
    """

    mean: np.ndarray
    cov_diag: np.ndarray
    axis: Literal["row", "column"]
    mean_avg: float
    var_avg: float

    def __post_init__(self):
        if not np.all(np.asarray(self.cov_diag) > 0):
            raise ValueError("cov_diag entries must be strictly positive")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        size = (size,) if isinstance(size, int) else tuple(size)
        z = rng.standard_normal(size + self.mean.shape)
        return self.mean + np.sqrt(self.cov_diag) * z


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def sample(d: MatrixNormalKS, seed: int) -> np.ndarray:
    """One ``h x w`` draw; deterministic for a given seed."""
    return sample_many(d, 1, seed)[0]


def sample_many(d: MatrixNormalKS, n: int, seed: int) -> np.ndarray:
    """``n`` independent draws stacked as an ``(n, h, w)`` array."""
    z = _rng(seed).standard_normal((n, d.h, d.w))
    return d.mean + np.sqrt(d.entry_variance) * z


def row_average_marginal(d: MatrixNormalKS) -> MarginalSpec:
    """Law of ``(sum_i X[i, :]) / h``: mean ``mean(mu) + upsilon``, variance ``(mean(Omega) + Psi_jj) / h``."""
    mu_bar = float(d.mu.mean())
    omega_bar = float(d.omega_diag.mean())
    return MarginalSpec(
        mean=mu_bar + d.upsilon,
        cov_diag=(omega_bar + d.psi_diag) / d.h,
        axis="row",
        mean_avg=mu_bar,
        var_avg=omega_bar,
    )


def col_average_marginal(d: MatrixNormalKS) -> MarginalSpec:
    """Law of ``(sum_j X[:, j]) / w``: mean ``mean(upsilon) + mu``, variance ``(mean(Psi) + Omega_ii) / w``."""
    upsilon_bar = float(d.upsilon.mean())
    psi_bar = float(d.psi_diag.mean())
    return MarginalSpec(
        mean=upsilon_bar + d.mu,
        cov_diag=(psi_bar + d.omega_diag) / d.w,
        axis="column",
        mean_avg=upsilon_bar,
        var_avg=psi_bar,
    )


def reconstruct(rows, cols) -> np.ndarray:
    """``[r_1, ..., r_h]^T + [c_1, ..., c_w]``.

    ``rows`` is ``(h, w)`` with ``r_k`` in row k; ``cols`` is ``(w, h)`` with
    ``c_k`` in row k. Leading batch axes are allowed on both.
    """
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    if rows.ndim < 2 or cols.ndim != rows.ndim or rows.shape[-2:] != cols.shape[-2:][::-1]:
        raise ShapeError(f"rows {rows.shape} and cols {cols.shape} do not describe the same h x w matrix")
    return rows + np.swapaxes(cols, -1, -2)


def reconstruct_many(d: MatrixNormalKS, n: int, seed: int) -> np.ndarray:
    """``n`` reconstructions from independent marginal draws, shape ``(n, h, w)``."""
    rng = _rng(seed)
    rows = row_average_marginal(d).sample(rng, (n, d.h))
    cols = col_average_marginal(d).sample(rng, (n, d.w))
    return reconstruct(rows, cols)


def reconstruction_distribution(d: MatrixNormalKS) -> MatrixNormalKS:
    """Law of :func:`reconstruct` as another outer-sum / Kronecker-sum model.

    Mean ``(mu (+) upsilon) + (mean(mu) + mean(upsilon))``, covariance
    ``(mean(Psi) + Omega) / w  (+)  (mean(Omega) + Psi) / h``. The global
    mean shift is folded into the row component.
    """
    row = row_average_marginal(d)
    col = col_average_marginal(d)
    return MatrixNormalKS(
        mu=d.mu + row.mean_avg + col.mean_avg,
        upsilon=d.upsilon.copy(),
        omega_diag=col.cov_diag,
        psi_diag=row.cov_diag,
    )


def trace_identity_check(d: MatrixNormalKS) -> tuple[float, float]:
    """Both sides of the square-case trace identity for the reconstruction covariance.

    ``lhs`` is the trace of the materialized ``(mean(Psi) + Omega)/w (+) (mean(Omega) + Psi)/h``,
    ``rhs`` is ``(2/h) tr(Omega (+) Psi)``.
    """
    if d.h != d.w:
        raise ValueError(f"trace identity requires h == w, got h={d.h}, w={d.w}")
    rec = reconstruction_distribution(d)
    lhs = trace(kronecker_sum(np.diag(rec.omega_diag), np.diag(rec.psi_diag)))
    rhs = (2.0 / d.h) * trace(kronecker_sum(np.diag(d.omega_diag), np.diag(d.psi_diag)))
    return lhs, rhs


def normalize_mean(d: MatrixNormalKS) -> MatrixNormalKS:
    """Center ``mu`` and ``upsilon`` so that ``mean(mu) + mean(upsilon) = 0``.

    The outer-sum mean changes by the constant ``-(mean(mu) + mean(upsilon))``.
    """
    return MatrixNormalKS(
        mu=d.mu - d.mu.mean(),
        upsilon=d.upsilon - d.upsilon.mean(),
        omega_diag=d.omega_diag,
        psi_diag=d.psi_diag,
    )
