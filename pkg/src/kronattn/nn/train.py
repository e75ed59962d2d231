"""Seeded toy training: a reduced network on a synthetic texture task.

Four classes of 16x16 RGB images: horizontal stripes, vertical stripes,
checkerboard and diagonal stripes, each with random phase, period, colour
and additive noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arch import builtin_arch
from .layers import softmax_cross_entropy
from .network import Network

NUM_PATTERNS = 4


def make_patterns(rng: np.random.Generator, n: int, size: int = 16, noise: float = 0.3):
    """``n`` images ``(n, size, size, 3)`` and integer labels in ``[0, 4)``."""
    labels = rng.integers(0, NUM_PATTERNS, size=n)
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    images = np.empty((n, size, size, 3))
    for k, label in enumerate(labels):
        period = rng.integers(3, 6)
        phase = rng.uniform(0, 2 * np.pi)
        if label == 0:
            base = np.sin(2 * np.pi * ii / period + phase)
        elif label == 1:
            base = np.sin(2 * np.pi * jj / period + phase)
        elif label == 2:
            base = np.sign(np.sin(np.pi * ii / 2 + phase) * np.sin(np.pi * jj / 2 + phase))
        else:
            base = np.sin(2 * np.pi * (ii + jj) / period + phase)
        colour = rng.uniform(0.5, 1.5, size=3)
        images[k] = base[:, :, None] * colour + noise * rng.standard_normal((size, size, 3))
    return images, labels


class SGDMomentum:
    def __init__(self, network: Network, lr: float = 0.05, momentum: float = 0.9):
        self.lr, self.momentum = lr, momentum
        self.slots = [(layer, key) for layer, key in network.parameters()]
        self.velocity = {id(layer.params[key]): np.zeros_like(layer.params[key]) for layer, key in self.slots}

    def step(self):
        for layer, key in self.slots:
            if key not in layer.grads:
                continue
            p = layer.params[key]
            v = self.velocity[id(p)]
            v *= self.momentum
            v -= self.lr * layer.grads[key]
            p += v


@dataclass
class TrainResult:
    attention: str
    losses: list[float] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        """Mean training loss over the last ten steps."""
        return float(np.mean(self.losses[-10:]))

    @property
    def ratio(self) -> float:
        return self.final_loss / self.initial_loss


def toytrain(attention: str = "kao_kv", steps: int = 200, batch: int = 16, lr: float = 0.05,
             momentum: float = 0.9, seed: int = 0, arch=None) -> TrainResult:
    arch = arch or builtin_arch("toy", num_classes=NUM_PATTERNS, attention=attention)
    net = Network(arch.with_attention(attention), seed=seed)
    opt = SGDMomentum(net, lr, momentum)
    rng = np.random.default_rng(seed + 1)
    result = TrainResult(attention)
    size = arch.input_shape[0]
    for _ in range(steps):
        x, y = make_patterns(rng, batch, size)
        logits = net.forward(x, train=True)
        loss, dlogits = softmax_cross_entropy(logits, y)
        net.backward(dlogits)
        opt.step()
        result.losses.append(loss)
    return result
