"""Network assembly from an :class:`~kronattn.nn.arch.ArchSpec`, with cost tallies.

Counting rules: convolutions carry no bias and are each followed by batch
norm (scale and shift, 2 parameters per channel); the fully connected
classifier has a bias; an attention path owns a ``c x c`` value transform.
Multiply-adds follow :mod:`kronattn.costmodel`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..attention import CoeffNorm
from .arch import ArchSpec, DISPLAY
from .layers import Conv1x1, Conv3x3, GlobalAvgPool, Layer, Linear, Sequential, conv_bn
from .modules import InvertedModule


@dataclass(frozen=True)
class TallyRow:
    name: str
    kind: str
    in_shape: tuple
    params: int
    madd: int


@dataclass(frozen=True)
class ParamTally:
    rows: tuple[TallyRow, ...]
    coeff_norm_params: int

    @property
    def total(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_with_coeff_norm(self) -> int:
        """Total if every attention path also carries a coefficient batch norm (2 parameters)."""
        return self.total + self.coeff_norm_params


@dataclass(frozen=True)
class CostTally:
    rows: tuple[TallyRow, ...]

    @property
    def total(self) -> int:
        return sum(r.madd for r in self.rows)


class Network:
    """Stem, module stages, 1x1 head, global pooling and classifier, in arch order."""

    def __init__(self, arch: ArchSpec, seed: int = 0, batchnorm: bool = True):
        arch.validate()
        self.arch = arch
        rng = np.random.default_rng(seed)
        coeff = CoeffNorm() if arch.coeff_norm else None
        self.blocks: list[tuple[str, Layer, tuple]] = []
        for i, st in enumerate(arch.stages, 1):
            label = f"stage{i}:{DISPLAY[st.operator]}"
            if st.operator == "stem":
                layer = conv_bn(Conv3x3(st.c_in, st.c, st.s, rng), st.c, batchnorm=batchnorm)
                self.blocks.append((label, layer, (st.h, st.w, st.c_in)))
            elif st.operator == "head":
                layer = conv_bn(Conv1x1(st.c_in, st.c, rng), st.c, batchnorm=batchnorm)
                self.blocks.append((label, layer, (st.h, st.w, st.c_in)))
            elif st.operator == "classifier":
                self.blocks.append((f"{label}.pool", GlobalAvgPool(), (st.h, st.w, st.c_in)))
                self.blocks.append((f"{label}.fc", Linear(st.c_in, st.c, rng), (1, 1, st.c_in)))
            else:
                for j, (spec, (h, w, c_in, _)) in enumerate(zip(st.module_specs(arch.attention), st.repeats())):
                    module = InvertedModule(spec, rng, batchnorm=batchnorm, coeff_norm=coeff)
                    self.blocks.append((f"{label}.{j}", module, (h, w, c_in)))

    @property
    def modules(self) -> list[InvertedModule]:
        return [layer for _, layer, _ in self.blocks if isinstance(layer, InvertedModule)]

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Logits ``(N, k)`` for a batch ``(N, h, w, 3)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        for _, layer, _ in self.blocks:
            x = layer.forward(x, train)
        return x

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        logits = self.forward(x)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for _, layer, _ in reversed(self.blocks):
            d = layer.backward(d)
        return d

    def leaf_layers(self) -> Iterator[tuple[str, Layer, tuple]]:
        """``(name, layer, in_shape)`` for every parameterized or costed leaf layer."""
        for name, block, in_shape in self.blocks:
            if isinstance(block, InvertedModule):
                for row, (_, layer) in zip(block.layer_costs(in_shape), block.sublayers()):
                    yield f"{name}.{row['name']}", layer, row["in_shape"]
            elif isinstance(block, Sequential):
                shape = in_shape
                for layer in block.layers:
                    yield f"{name}.{layer.kind}", layer, shape
                    shape = layer.out_shape(shape)
            else:
                yield name, block, in_shape

    def parameters(self) -> Iterator[tuple[Layer, str]]:
        for _, layer, _ in self.leaf_layers():
            for key in layer.params:
                yield layer, key

    def tally_rows(self) -> tuple[TallyRow, ...]:
        return tuple(TallyRow(name, layer.kind, tuple(shape), layer.n_params(), layer.madd(shape))
                     for name, layer, shape in self.leaf_layers())


def build_network(arch: ArchSpec, seed: int = 0, batchnorm: bool = True) -> Network:
    return Network(arch, seed, batchnorm)


def count_params(network: Network) -> ParamTally:
    rows = network.tally_rows()
    n_attention = sum(1 for r in rows if r.kind == "attention")
    already = network.arch.coeff_norm
    return ParamTally(rows, 0 if already else n_attention * CoeffNorm.n_params)


def count_madd(network: Network) -> CostTally:
    return CostTally(network.tally_rows())
