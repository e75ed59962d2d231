"""Numerical verification suites shared by the CLI and the test-suite.

* trace identity sweep for the reconstruction covariance,
* Monte Carlo moments of row/column averages and of the reconstruction,
* brute-force oracles for the four attention operators,
* finite-difference checks of every hand-written backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from . import grad, matvar, tensor
from .attention import AttnConfig, CoeffNorm, OPERATORS, attn
from .grad import GradCheckReport, gradcheck_op


# -- trace identity -------------------------------------------------------------

def random_model(rng: np.random.Generator, h: int, w: int) -> matvar.MatrixNormalKS:
    return matvar.MatrixNormalKS(
        mu=rng.normal(size=h),
        upsilon=rng.normal(size=w),
        omega_diag=rng.uniform(0.1, 2.0, size=h),
        psi_diag=rng.uniform(0.1, 2.0, size=w),
    )


@dataclass(frozen=True)
class TraceResult:
    h: int
    draws: int
    max_abs_diff: float
    lhs: float  # of the last draw
    rhs: float


def trace_sweep(sizes: Iterable[int] = range(2, 17), draws: int = 50, seed: int = 0) -> list[TraceResult]:
    rng = np.random.default_rng(seed)
    out = []
    for h in sizes:
        worst, lhs, rhs = 0.0, 0.0, 0.0
        for _ in range(draws):
            lhs, rhs = matvar.trace_identity_check(random_model(rng, h, h))
            worst = max(worst, abs(lhs - rhs))
        out.append(TraceResult(h, draws, worst, lhs, rhs))
    return out


# -- Monte Carlo moments ----------------------------------------------------------

@dataclass(frozen=True)
class MomentCheck:
    name: str
    max_z: float  # worst |mean error| in standard errors
    max_var_rel: float  # worst relative variance error

    def passed(self, z_limit: float = 3.0, var_limit: float = 0.05) -> bool:
        return self.max_z < z_limit and self.max_var_rel < var_limit


def _moment_check(name, draws, mean, var) -> MomentCheck:
    n = draws.shape[0]
    est_mean = draws.mean(axis=0)
    est_var = draws.var(axis=0, ddof=1)
    z = np.abs(est_mean - mean) / np.sqrt(var / n)
    return MomentCheck(name, float(z.max()), float(np.max(np.abs(est_var / var - 1.0))))


def monte_carlo_moments(d: matvar.MatrixNormalKS, n: int = 100_000, seed: int = 0) -> list[MomentCheck]:
    """Compare sample moments of averages and reconstructions with their closed forms."""
    x = matvar.sample_many(d, n, seed)
    row = matvar.row_average_marginal(d)
    col = matvar.col_average_marginal(d)
    rec = matvar.reconstruction_distribution(d)
    return [
        _moment_check("sample", x, d.mean, d.entry_variance),
        _moment_check("row_average", x.mean(axis=1), row.mean, row.cov_diag),
        _moment_check("column_average", x.mean(axis=2), col.mean, col.cov_diag),
        _moment_check("reconstruction", matvar.reconstruct_many(d, n, seed + 1), rec.mean, rec.entry_variance),
    ]


# -- brute-force oracles ------------------------------------------------------------

def oracle_attn(q, k, v, cfg: Optional[AttnConfig] = None) -> np.ndarray:
    """Scalar-loop attention: o[:, j] = sum_i softmax_i(k_i . q_j) v_i."""
    cfg = cfg or AttnConfig()
    q = q if cfg.wq is None else cfg.wq @ q
    k = k if cfg.wk is None else cfg.wk @ k
    v = v if cfg.wv is None else cfg.wv @ v
    m, n = k.shape[1], q.shape[1]
    out = np.zeros((v.shape[0], n))
    for j in range(n):
        scores = [sum(k[r, i] * q[r, j] for r in range(q.shape[0])) for i in range(m)]
        if cfg.coeff_norm is not None:
            scores = [cfg.coeff_norm.apply(s) for s in scores]
        top = max(scores)
        weights = [np.exp(s - top) for s in scores]
        total = sum(weights)
        for i in range(m):
            out[:, j] += (weights[i] / total) * v[:, i]
    return out


def _columns(t) -> np.ndarray:
    """Pixels of ``t`` as columns in row-major order: column ``i*w + j`` is ``t[i, j, :]``."""
    h, w, c = t.shape
    return np.array([[t[i, j, k] for i in range(h) for j in range(w)] for k in range(c)]).reshape(c, h * w)


def _uncolumns(m, h, w) -> np.ndarray:
    out = np.zeros((h, w, m.shape[0]))
    for i in range(h):
        for j in range(w):
            out[i, j, :] = m[:, i * w + j]
    return out


def _oracle_context(t) -> np.ndarray:
    h, w, c = t.shape
    ctx = np.zeros((c, w + h))
    for k in range(c):
        for j in range(w):
            ctx[k, j] = sum(t[i, j, k] for i in range(h)) / h
        for i in range(h):
            ctx[k, w + i] = sum(t[i, j, k] for j in range(w)) / w
    return ctx


def _oracle_pool(t) -> np.ndarray:
    h, w, c = t.shape
    ph, pw = -(-h // 2), -(-w // 2)
    out = np.zeros((ph, pw, c))
    for a in range(ph):
        for b in range(pw):
            cells = [(i, j) for i in (2 * a, 2 * a + 1) for j in (2 * b, 2 * b + 1) if i < h and j < w]
            out[a, b] = sum(t[i, j] for i, j in cells) / len(cells)
    return out


def oracle_operator(kind: str, t, cfg: Optional[AttnConfig] = None) -> np.ndarray:
    h, w, _ = t.shape
    x = _columns(t)
    if kind == "regular":
        return _uncolumns(oracle_attn(x, x, x, cfg), h, w)
    if kind == "pooled":
        kv = _columns(_oracle_pool(t))
        return _uncolumns(oracle_attn(x, kv, kv, cfg), h, w)
    ctx = _oracle_context(t)
    if kind == "kao_kv":
        return _uncolumns(oracle_attn(x, ctx, ctx, cfg), h, w)
    if kind == "kao_qkv":
        o = oracle_attn(ctx, ctx, ctx, cfg)
        out = np.zeros((h, w, o.shape[0]))
        for a in range(h):
            for b in range(w):
                out[a, b, :] = o[:, w + a] + o[:, b]
        return out
    raise ValueError(f"unknown attention kind {kind!r}")


def random_config(rng: np.random.Generator, c: int, transforms: bool = True) -> AttnConfig:
    if not transforms:
        return AttnConfig()
    d = int(rng.integers(1, 4))
    return AttnConfig(
        wq=rng.normal(size=(d, c)),
        wk=rng.normal(size=(d, c)),
        wv=rng.normal(size=(c, c)),
        coeff_norm=CoeffNorm(mean=0.1, var=1.5, gamma=0.8, beta=0.3),
    )


@dataclass(frozen=True)
class OracleResult:
    kind: str
    cases: int
    max_abs_diff: float


def oracle_sweep(seeds: int = 20, max_side: int = 4, max_channels: int = 3) -> list[OracleResult]:
    """Every operator against its oracle on all shapes up to ``max_side x max_side x max_channels``."""
    results = []
    for kind, fn in OPERATORS.items():
        worst, cases = 0.0, 0
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            for h in range(1, max_side + 1):
                for w in range(1, max_side + 1):
                    for c in range(1, max_channels + 1):
                        t = rng.normal(size=(h, w, c))
                        cfg = random_config(rng, c, transforms=bool(seed % 2))
                        worst = max(worst, float(np.max(np.abs(fn(t, cfg) - oracle_operator(kind, t, cfg)))))
                        cases += 1
        results.append(OracleResult(kind, cases, worst))
    return results


# -- gradient checks ----------------------------------------------------------------

GradCase = Callable[[np.random.Generator], GradCheckReport]


def _small_shape(rng):
    return int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(1, 4))


def _case_softmax(rng, eps, thr):
    x = rng.normal(size=(int(rng.integers(2, 6)), int(rng.integers(2, 6))))
    up = rng.normal(size=x.shape)
    return gradcheck_op(tensor.softmax_columns, lambda z, g: grad.softmax_columns_backward(tensor.softmax_columns(z), g),
                        x, up, eps, thr)


def _case_unfold(rng, eps, thr):
    h, w, c = _small_shape(rng)
    return gradcheck_op(tensor.unfold_mode3, lambda z, g: grad.unfold_mode3_backward(g, h, w),
                        rng.normal(size=(h, w, c)), rng.normal(size=(c, h * w)), eps, thr)


def _case_fold(rng, eps, thr):
    h, w, c = _small_shape(rng)
    return gradcheck_op(lambda z: tensor.fold_mode3(z, h, w), lambda z, g: grad.fold_mode3_backward(g),
                        rng.normal(size=(c, h * w)), rng.normal(size=(h, w, c)), eps, thr)


def _case_context(rng, eps, thr):
    h, w, c = _small_shape(rng)
    return gradcheck_op(tensor.juxtapose_context, lambda z, g: grad.juxtapose_context_backward(g, h, w),
                        rng.normal(size=(h, w, c)), rng.normal(size=(c, w + h)), eps, thr)


def _case_pool(rng, eps, thr):
    h, w, c = _small_shape(rng)
    ph, pw = tensor.pooled_size(h), tensor.pooled_size(w)
    return gradcheck_op(tensor.avg_pool, lambda z, g: grad.avg_pool_backward(g, h, w),
                        rng.normal(size=(h, w, c)), rng.normal(size=(ph, pw, c)), eps, thr)


def _attn_inputs(rng):
    d, p = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    m, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    cfg = AttnConfig(wq=rng.normal(size=(2, d)), wk=rng.normal(size=(2, d)), wv=rng.normal(size=(p, p)),
                     coeff_norm=CoeffNorm(mean=0.2, var=0.8, gamma=1.1, beta=-0.4))
    q, k, v = rng.normal(size=(d, n)), rng.normal(size=(d, m)), rng.normal(size=(p, m))
    return q, k, v, cfg, rng.normal(size=(p, n))


def _case_attn_input(which):
    def case(rng, eps, thr):
        q, k, v, cfg, up = _attn_inputs(rng)
        args = {"q": q, "k": k, "v": v}

        def fwd(z):
            return attn(**{**args, which: z}, cfg=cfg)

        def bwd(z, g):
            return grad.attn_backward(**{**args, which: z}, upstream=g, cfg=cfg)["d" + which]

        return gradcheck_op(fwd, bwd, args[which], up, eps, thr)
    return case


def _case_attn_weight(which):
    def case(rng, eps, thr):
        q, k, v, cfg, up = _attn_inputs(rng)
        key = "w" + which

        def with_weight(z):
            return AttnConfig(**{**{"wq": cfg.wq, "wk": cfg.wk, "wv": cfg.wv, "coeff_norm": cfg.coeff_norm}, key: z})

        return gradcheck_op(lambda z: attn(q, k, v, with_weight(z)),
                            lambda z, g: grad.attn_backward(q, k, v, g, with_weight(z))["d" + key],
                            getattr(cfg, key), up, eps, thr)
    return case


def _case_operator(kind):
    fn, grads = OPERATORS[kind], grad.OPERATOR_GRADS[kind]

    def case(rng, eps, thr):
        h, w, c = _small_shape(rng)
        cfg = random_config(rng, c)
        return gradcheck_op(lambda z: fn(z, cfg), lambda z, g: grads(z, g, cfg)[0],
                            rng.normal(size=(h, w, c)), rng.normal(size=(h, w, c)), eps, thr)
    return case


GRAD_CASES: dict[str, Callable] = {
    "softmax_columns": _case_softmax,
    "unfold_mode3": _case_unfold,
    "fold_mode3": _case_fold,
    "juxtapose_context": _case_context,
    "avg_pool": _case_pool,
    "attn.q": _case_attn_input("q"),
    "attn.k": _case_attn_input("k"),
    "attn.v": _case_attn_input("v"),
    "attn.wq": _case_attn_weight("q"),
    "attn.wk": _case_attn_weight("k"),
    "attn.wv": _case_attn_weight("v"),
    **{f"{kind}": _case_operator(kind) for kind in OPERATORS},
}


@dataclass(frozen=True)
class GradSuiteResult:
    op: str
    seeds: int
    worst: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.worst.passed


def gradcheck_suite(seeds: int = 10, epsilon: float = 1e-5, threshold: float = 1e-5, seed: int = 0,
                    ops: Optional[Iterable[str]] = None) -> list[GradSuiteResult]:
    out = []
    for name in ops or GRAD_CASES:
        reports = [GRAD_CASES[name](np.random.default_rng([seed, s]), epsilon, threshold) for s in range(seeds)]
        out.append(GradSuiteResult(name, seeds, max(reports, key=lambda r: r.max_rel_error)))
    return out
