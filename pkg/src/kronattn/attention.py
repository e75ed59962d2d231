"""Attention operators on matrices and on (h, w, c) feature tensors.

``attn`` is the dot-product operator ``O = V softmax(K^T Q)`` with a
column-wise softmax. The tensor operators differ only in which matrices they
feed it:

==================  =====================  =====================  ==================
operator            query                  key / value            output folding
==================  =====================  =====================  ==================
``nonlocal_2d``     mode-3 unfolding       mode-3 unfolding       fold_mode3
``attn_pooled_2d``  mode-3 unfolding       unfolding of 2x2 pool  fold_mode3
``kao_kv``          mode-3 unfolding       context ``[H^T, L^T]`` fold_mode3
``kao_qkv``         context                context                per-channel outer sum
==================  =====================  =====================  ==================
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .tensor import (
    ShapeError,
    as_matrix,
    as_tensor3,
    avg_pool,
    fold_mode3,
    juxtapose_context,
    matmul,
    softmax_columns,
    unfold_mode3,
)

Probe = Callable[[str, np.ndarray], None]


@dataclass(frozen=True)
class CoeffNorm:
    """Inference-mode batch norm applied to every entry of the coefficient matrix.

    Statistics are scalars shared by all coefficients, so the layer adds two
    trainable parameters (``gamma``, ``beta``). The shift cancels inside the
    column softmax; only ``scale`` changes the output.
    """

    mean: float = 0.0
    var: float = 1.0
    gamma: float = 1.0
    beta: float = 0.0
    eps: float = 1e-5

    def __post_init__(self):
        if self.var < 0 or self.eps <= 0:
            raise ValueError("CoeffNorm needs var >= 0 and eps > 0")

    @property
    def scale(self) -> float:
        return self.gamma / float(np.sqrt(self.var + self.eps))

    @property
    def shift(self) -> float:
        return self.beta - self.scale * self.mean

    def apply(self, e: np.ndarray) -> np.ndarray:
        return self.scale * e + self.shift

    n_params = 2


@dataclass(frozen=True)
class AttnConfig:
    """Optional linear transforms on Q, K, V and coefficient normalization.

    ``wq``/``wk`` are ``d' x d``, ``wv`` is ``p' x p``. All default to off.
    """

    wq: Optional[np.ndarray] = None
    wk: Optional[np.ndarray] = None
    wv: Optional[np.ndarray] = None
    coeff_norm: Optional[CoeffNorm] = None

    def __post_init__(self):
        for name in ("wq", "wk", "wv"):
            w = getattr(self, name)
            if w is not None:
                object.__setattr__(self, name, as_matrix(w, name))
        if self.wq is not None and self.wk is not None and self.wq.shape[0] != self.wk.shape[0]:
            raise ShapeError(
                f"wq and wk must produce the same number of rows, got {self.wq.shape[0]} and {self.wk.shape[0]}"
            )

    @property
    def use_wq(self) -> bool:
        return self.wq is not None

    @property
    def use_wk(self) -> bool:
        return self.wk is not None

    @property
    def use_wv(self) -> bool:
        return self.wv is not None


DEFAULT_CONFIG = AttnConfig()


def _transform(w, x, name):
    if w is None:
        return x
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"{name} has {w.shape[1]} columns but its input has {x.shape[0]} rows")
    return matmul(w, x)


def attn_forward(q, k, v, cfg: Optional[AttnConfig] = None, probe: Optional[Probe] = None) -> dict:
    """Run the attention operator and return every intermediate.

    Keys: ``q``, ``k``, ``v`` (after transforms), ``e`` (normalized
    coefficients), ``s`` (softmax weights), ``o`` (output). The backward
    pass in :mod:`kronattn.grad` consumes this dictionary.
    """
    cfg = cfg or DEFAULT_CONFIG
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    if k.shape[1] != v.shape[1]:
        raise ShapeError(f"key and value column counts differ: {k.shape[1]} vs {v.shape[1]}")
    qt = _transform(cfg.wq, q, "wq")
    kt = _transform(cfg.wk, k, "wk")
    vt = _transform(cfg.wv, v, "wv")
    if qt.shape[0] != kt.shape[0]:
        raise ShapeError(f"query and key dimensions differ: {qt.shape[0]} vs {kt.shape[0]}")
    e = matmul(kt.T, qt)
    if cfg.coeff_norm is not None:
        e = cfg.coeff_norm.apply(e)
    s = softmax_columns(e)
    if probe is not None:
        probe("coefficients", e)
        probe("weights", s)
    o = matmul(vt, s)
    return {"q": qt, "k": kt, "v": vt, "e": e, "s": s, "o": o}


def attn(q, k, v, cfg: Optional[AttnConfig] = None, probe: Optional[Probe] = None) -> np.ndarray:
    """``O = W^V V softmax((W^K K)^T W^Q Q)``; transforms absent in ``cfg`` are skipped."""
    return attn_forward(q, k, v, cfg, probe)["o"]


def nonlocal_2d(t, cfg: Optional[AttnConfig] = None, probe: Optional[Probe] = None) -> np.ndarray:
    t = as_tensor3(t)
    h, w, _ = t.shape
    x = unfold_mode3(t)
    return fold_mode3(attn(x, x, x, cfg, probe), h, w)


def attn_pooled_2d(t, cfg: Optional[AttnConfig] = None, probe: Optional[Probe] = None) -> np.ndarray:
    """Self-attention whose keys and values come from a 2x2 average-pooled copy of ``t``."""
    t = as_tensor3(t)
    h, w, _ = t.shape
    kv = unfold_mode3(avg_pool(t, 2))
    return fold_mode3(attn(unfold_mode3(t), kv, kv, cfg, probe), h, w)


def kao_kv(t, cfg: Optional[AttnConfig] = None, probe: Optional[Probe] = None) -> np.ndarray:
    t = as_tensor3(t)
    h, w, _ = t.shape
    ctx = juxtapose_context(t)
    return fold_mode3(attn(unfold_mode3(t), ctx, ctx, cfg, probe), h, w)


def split_context(o: np.ndarray, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a ``c x (w + h)`` context-shaped matrix into its width and height blocks."""
    if o.shape[1] != w + h:
        raise ShapeError(f"expected {w + h} columns, got {o.shape[1]}")
    return o[:, :w], o[:, w:]


def context_outer_sum(o: np.ndarray, h: int, w: int) -> np.ndarray:
    """Tensor whose k-th frontal slice is ``outer_sum(height_block[k], width_block[k])``."""
    width_part, height_part = split_context(o, h, w)
    return height_part.T[:, None, :] + width_part.T[None, :, :]


def kao_qkv(t, cfg: Optional[AttnConfig] = None, probe: Optional[Probe] = None) -> np.ndarray:
    t = as_tensor3(t)
    h, w, _ = t.shape
    ctx = juxtapose_context(t)
    return context_outer_sum(attn(ctx, ctx, ctx, cfg, probe), h, w)


OPERATORS = {
    "regular": nonlocal_2d,
    "pooled": attn_pooled_2d,
    "kao_kv": kao_kv,
    "kao_qkv": kao_qkv,
}


def get_operator(kind: str):
    try:
        return OPERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown attention kind {kind!r}; choose from {sorted(OPERATORS)}") from None
