"""Inverted-residual building blocks with optional attention path.

``base``       1x1 expand to ``r*c`` -> 3x3 depth-wise (stride s) -> 1x1 project.
``base_skip``  1x1 expand to ``(r-1)*c``, concatenated with the input to get
               ``r*c`` maps; identical to ``base`` when ``s > 1``.
``attn``       1x1 expand to ``(r-1)*c`` -> depth-wise; in parallel an attention
               operator on the input gives ``c`` maps (average-pooled by ``s``
               when ``s > 1``); the two are concatenated before the projection.
``attn_skip``  ``attn`` plus an identity skip around the attention operator
               when ``s == 1``; no extra parameters or multiply-adds.

Every kind adds the input to the output when ``s == 1`` and ``c_in == c_out``.
With ``r == 1`` the ``base`` kinds have no expansion convolution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..attention import CoeffNorm
from .layers import Attention, AvgPool, Conv1x1, DWConv3x3, Layer, conv_bn

MODULE_KINDS = ("base", "base_skip", "attn", "attn_skip")


@dataclass(frozen=True)
class ModuleSpec:
    kind: str
    r: int
    c_in: int
    c_out: int
    s: int = 1
    attention_kind: str = "kao_kv"

    def __post_init__(self):
        if self.kind not in MODULE_KINDS:
            raise ValueError(f"unknown module kind {self.kind!r}")
        if self.s not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.s}")
        if self.c_in < 1 or self.c_out < 1 or self.r < 1:
            raise ValueError("channels and expansion factor must be positive")
        if self.kind in ("attn", "attn_skip") and self.r < 2:
            raise ValueError("attention modules need r >= 2 (the attention path replaces one expansion unit)")

    @property
    def residual(self) -> bool:
        return self.s == 1 and self.c_in == self.c_out

    @property
    def concat_input(self) -> bool:
        return self.kind == "base_skip" and self.s == 1

    @property
    def attention_skip(self) -> bool:
        return self.kind == "attn_skip" and self.s == 1

    @property
    def has_attention(self) -> bool:
        return self.kind in ("attn", "attn_skip")

    @property
    def expanded_channels(self) -> int:
        """Output channels of the 1x1 expansion convolution (0 when it is absent)."""
        if self.has_attention or self.concat_input:
            return (self.r - 1) * self.c_in
        return self.r * self.c_in if self.r > 1 else 0


class InvertedModule(Layer):
    kind = "module"

    def __init__(self, spec: ModuleSpec, rng: Optional[np.random.Generator] = None,
                 batchnorm: bool = True, coeff_norm: Optional[CoeffNorm] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        self.name = spec.kind
        c, e = spec.c_in, spec.expanded_channels
        self.expand = conv_bn(Conv1x1(c, e, rng), e, batchnorm=batchnorm) if e else None
        dw_channels = e if spec.has_attention else spec.r * c
        self.depthwise = conv_bn(DWConv3x3(dw_channels, spec.s, rng), dw_channels, batchnorm=batchnorm)
        self.attention = Attention(spec.attention_kind, c, coeff_norm, rng) if spec.has_attention else None
        self.pool = AvgPool(spec.s) if spec.has_attention and spec.s > 1 else None
        self.project = conv_bn(Conv1x1(spec.r * c, spec.c_out, rng), spec.c_out, activation=False, batchnorm=batchnorm)

    def blocks(self) -> list[tuple[str, Layer]]:
        parts = [("expand", self.expand), ("depthwise", self.depthwise), ("attention", self.attention),
                 ("pool", self.pool), ("project", self.project)]
        return [(name, block) for name, block in parts if block is not None]

    def sublayers(self) -> list[tuple[str, Layer]]:
        """Every leaf layer in a fixed order, named ``block.kind``."""
        return [(f"{name}.{layer.kind}", layer)
                for name, block in self.blocks() for layer in getattr(block, "layers", [block])]

    def forward(self, x, train=False):
        spec = self.spec
        self._x = x
        if spec.has_attention:
            conv = self.depthwise.forward(self.expand.forward(x, train), train)
            a = self.attention.forward(x, train)
            if spec.attention_skip:
                a = a + x
            if self.pool is not None:
                a = self.pool.forward(a, train)
            mid = np.concatenate([conv, a], axis=-1)
        else:
            parts = []
            if self.expand is not None:
                parts.append(self.expand.forward(x, train))
            if spec.concat_input or self.expand is None:
                parts.append(x)
            mid = self.depthwise.forward(np.concatenate(parts, axis=-1) if len(parts) > 1 else parts[0], train)
        y = self.project.forward(mid, train)
        if spec.residual:
            y = y + x
        return y

    def backward(self, dy):
        spec = self.spec
        d_mid = self.project.backward(dy)
        dx = dy.copy() if spec.residual else np.zeros_like(self._x)
        if spec.has_attention:
            e = (spec.r - 1) * spec.c_in
            d_conv, d_a = d_mid[..., :e], d_mid[..., e:]
            dx += self.expand.backward(self.depthwise.backward(d_conv))
            if self.pool is not None:
                d_a = self.pool.backward(d_a)
            if spec.attention_skip:
                dx += d_a
            dx += self.attention.backward(d_a)
            return dx
        d_cat = self.depthwise.backward(d_mid)
        if self.expand is None:
            return dx + d_cat
        e = spec.expanded_channels
        dx += self.expand.backward(d_cat[..., :e])
        if spec.concat_input:
            dx += d_cat[..., e:]
        return dx

    def out_shape(self, shape):
        return (-(-shape[0] // self.spec.s), -(-shape[1] // self.spec.s), self.spec.c_out)

    def layer_costs(self, shape) -> list[dict]:
        """Per-layer ``name``, ``kind``, ``in_shape``, ``params`` and ``madd`` for an ``(h, w, c_in)`` input."""
        h, w, c = shape
        ho, wo, _ = self.out_shape(shape)
        block_inputs = {
            "expand": (h, w, c),
            "depthwise": (h, w, self.depthwise.layers[0].c),
            "attention": (h, w, c),
            "pool": (h, w, c),
            "project": (ho, wo, self.spec.r * c),
        }
        rows = []
        for name, block in self.blocks():
            in_shape = block_inputs[name]
            for layer in getattr(block, "layers", [block]):
                rows.append({"name": f"{name}.{layer.kind}", "kind": layer.kind, "in_shape": in_shape,
                             "params": layer.n_params(), "madd": layer.madd(in_shape)})
                in_shape = layer.out_shape(in_shape)
        return rows

    def madd(self, shape):
        return sum(row["madd"] for row in self.layer_costs(shape))

    def n_params(self):
        return sum(layer.n_params() for _, layer in self.sublayers())
