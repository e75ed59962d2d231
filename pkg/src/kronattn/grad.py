"""Hand-written backward passes and a central-difference gradient checker.

Each ``backward_*`` function returns the gradient of ``<upstream, op(x)>``
with respect to the op's inputs. There is no autodiff graph; every op
recomputes its forward intermediates and applies the chain rule by hand.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .attention import AttnConfig, DEFAULT_CONFIG, attn_forward, split_context
from .tensor import (
    ShapeError,
    as_matrix,
    as_tensor3,
    avg_pool,
    fold_mode3,
    juxtapose_context,
    matmul,
    pool_counts,
    pooled_size,
    unfold_mode3,
)


# -- adjoints of the tensor primitives ---------------------------------------

def unfold_mode3_backward(upstream: np.ndarray, h: int, w: int) -> np.ndarray:
    return fold_mode3(upstream, h, w)


def fold_mode3_backward(upstream: np.ndarray) -> np.ndarray:
    return unfold_mode3(upstream)


def juxtapose_context_backward(upstream: np.ndarray, h: int, w: int) -> np.ndarray:
    """Spread a ``c x (w + h)`` gradient back over the ``(h, w, c)`` input.

    Each horizontal-mean entry received ``1/h`` of every entry in its column
    and each lateral-mean entry ``1/w`` of every entry in its row.
    """
    d_width, d_height = split_context(upstream, h, w)
    return d_width.T[None, :, :] / h + d_height.T[:, None, :] / w


def avg_pool_backward(upstream: np.ndarray, h: int, w: int, size: int = 2) -> np.ndarray:
    """Adjoint of :func:`kronattn.tensor.avg_pool` for ``(..., h, w, c)`` inputs."""
    g = upstream / pool_counts(h, w, size)[:, :, None]
    out = np.zeros(upstream.shape[:-3] + (h, w, upstream.shape[-1]))
    for di in range(size):
        for dj in range(size):
            target = out[..., di::size, dj::size, :]
            target += g[..., : target.shape[-3], : target.shape[-2], :]
    return out


def softmax_columns_backward(s: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Apply the per-column Jacobian ``diag(s) - s s^T`` of the column softmax."""
    return s * (upstream - (s * upstream).sum(axis=0, keepdims=True))


# -- attention ----------------------------------------------------------------

def attn_backward(q, k, v, upstream, cfg: Optional[AttnConfig] = None) -> dict:
    """Gradients of ``<upstream, attn(q, k, v)>`` for inputs and transform weights.

    Returns a dict with ``dq``, ``dk``, ``dv`` and, when the transform is
    present in ``cfg``, ``dwq``, ``dwk``, ``dwv``.
    """
    cfg = cfg or DEFAULT_CONFIG
    q, k, v = as_matrix(q, "q"), as_matrix(k, "k"), as_matrix(v, "v")
    g = as_matrix(upstream, "upstream")
    fw = attn_forward(q, k, v, cfg)
    if g.shape != fw["o"].shape:
        raise ShapeError(f"upstream shape {g.shape} does not match output {fw['o'].shape}")
    s = fw["s"]
    d_vt = matmul(g, s.T)
    d_s = matmul(fw["v"].T, g)
    d_e = softmax_columns_backward(s, d_s)
    if cfg.coeff_norm is not None:
        d_e = cfg.coeff_norm.scale * d_e
    d_qt = matmul(fw["k"], d_e)
    d_kt = matmul(fw["q"], d_e.T)

    grads = {}
    for name, w, x, d_xt in (("q", cfg.wq, q, d_qt), ("k", cfg.wk, k, d_kt), ("v", cfg.wv, v, d_vt)):
        if w is None:
            grads["d" + name] = d_xt
        else:
            grads["d" + name] = matmul(w.T, d_xt)
            grads["dw" + name] = matmul(d_xt, x.T)
    return grads


def backward_attn(q, k, v, upstream, cfg: Optional[AttnConfig] = None):
    """``(dq, dk, dv)`` for ``<upstream, attn(q, k, v, cfg)>``."""
    g = attn_backward(q, k, v, upstream, cfg)
    return g["dq"], g["dk"], g["dv"]


def _weight_grads(g: dict) -> dict:
    return {key: val for key, val in g.items() if key.startswith("dw")}


def _check_upstream(t: np.ndarray, upstream, channels: Optional[int] = None) -> np.ndarray:
    upstream = as_tensor3(upstream, "upstream")
    expected = t.shape[:2] + ((channels if channels is not None else t.shape[2]),)
    if upstream.shape != expected:
        raise ShapeError(f"upstream shape {upstream.shape} does not match output {expected}")
    return upstream


def _out_channels(t, cfg):
    return t.shape[2] if cfg is None or cfg.wv is None else cfg.wv.shape[0]


def nonlocal_2d_grads(t, upstream, cfg=None):
    t = as_tensor3(t)
    h, w, _ = t.shape
    up = _check_upstream(t, upstream, _out_channels(t, cfg))
    x = unfold_mode3(t)
    g = attn_backward(x, x, x, unfold_mode3(up), cfg)
    return fold_mode3(g["dq"] + g["dk"] + g["dv"], h, w), _weight_grads(g)


def attn_pooled_2d_grads(t, upstream, cfg=None):
    t = as_tensor3(t)
    h, w, _ = t.shape
    up = _check_upstream(t, upstream, _out_channels(t, cfg))
    kv = unfold_mode3(avg_pool(t, 2))
    g = attn_backward(unfold_mode3(t), kv, kv, unfold_mode3(up), cfg)
    d_pooled = fold_mode3(g["dk"] + g["dv"], pooled_size(h), pooled_size(w))
    return fold_mode3(g["dq"], h, w) + avg_pool_backward(d_pooled, h, w, 2), _weight_grads(g)


def kao_kv_grads(t, upstream, cfg=None):
    t = as_tensor3(t)
    h, w, _ = t.shape
    up = _check_upstream(t, upstream, _out_channels(t, cfg))
    ctx = juxtapose_context(t)
    g = attn_backward(unfold_mode3(t), ctx, ctx, unfold_mode3(up), cfg)
    dt = fold_mode3(g["dq"], h, w) + juxtapose_context_backward(g["dk"] + g["dv"], h, w)
    return dt, _weight_grads(g)


def kao_qkv_grads(t, upstream, cfg=None):
    t = as_tensor3(t)
    h, w, _ = t.shape
    up = _check_upstream(t, upstream, _out_channels(t, cfg))
    # adjoint of the per-channel outer sum: row sums feed the height block, column sums the width block
    d_o = np.concatenate([up.sum(axis=0).T, up.sum(axis=1).T], axis=1)
    ctx = juxtapose_context(t)
    g = attn_backward(ctx, ctx, ctx, d_o, cfg)
    return juxtapose_context_backward(g["dq"] + g["dk"] + g["dv"], h, w), _weight_grads(g)


OPERATOR_GRADS = {
    "regular": nonlocal_2d_grads,
    "pooled": attn_pooled_2d_grads,
    "kao_kv": kao_kv_grads,
    "kao_qkv": kao_qkv_grads,
}


def backward_nonlocal_2d(t, upstream, cfg=None) -> np.ndarray:
    return nonlocal_2d_grads(t, upstream, cfg)[0]


def backward_attn_pooled_2d(t, upstream, cfg=None) -> np.ndarray:
    return attn_pooled_2d_grads(t, upstream, cfg)[0]


def backward_kao_kv(t, upstream, cfg=None) -> np.ndarray:
    return kao_kv_grads(t, upstream, cfg)[0]


def backward_kao_qkv(t, upstream, cfg=None) -> np.ndarray:
    return kao_qkv_grads(t, upstream, cfg)[0]


# -- finite differences -------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple
    epsilon: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + epsilon
        fp = float(f(x))
        x[idx] = orig - epsilon
        fm = float(f(x))
        x[idx] = orig
        out[idx] = (fp - fm) / (2.0 * epsilon)
    return out


def gradcheck(
    f: Callable[[np.ndarray], float],
    x,
    analytic,
    epsilon: float = 1e-5,
    threshold: float = 1e-5,
) -> GradCheckReport:
    """Compare an analytic gradient of scalar ``f`` against central differences.

    ``analytic`` is either the gradient array or a callable returning it for
    ``x``. The error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(analytic(x) if callable(analytic) else analytic, dtype=np.float64)
    if a.shape != x.shape:
        raise ShapeError(f"analytic gradient shape {a.shape} does not match input {x.shape}")
    n = numerical_gradient(f, x, epsilon)
    rel = np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return GradCheckReport(
        max_rel_error=float(rel.max()) if rel.size else 0.0,
        worst_index=tuple(int(i) for i in worst),
        epsilon=epsilon,
        threshold=threshold,
    )


def gradcheck_op(forward, backward, x, upstream, epsilon: float = 1e-5, threshold: float = 1e-5) -> GradCheckReport:
    """Check ``backward(x, upstream)`` as the gradient of ``<upstream, forward(x)>``."""
    upstream = np.asarray(upstream, dtype=np.float64)
    return gradcheck(
        lambda z: float(np.sum(upstream * forward(z))),
        x,
        backward(np.asarray(x, dtype=np.float64), upstream),
        epsilon,
        threshold,
    )
