"""Layers with hand-written backward passes.

Activations are batched ``(N, h, w, c)`` float64 arrays. Every layer keeps
what its backward pass needs from the last ``forward`` call, exposes
``params``/``grads`` dictionaries, and reports its parameter count and
per-sample MAdd for a given ``(h, w, c)`` input.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .. import costmodel
from ..attention import AttnConfig, CoeffNorm, get_operator
from ..grad import OPERATOR_GRADS, avg_pool_backward
from ..tensor import avg_pool, matmul, pooled_size


def xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _out_size(n: int, stride: int) -> int:
    return -(-n // stride)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.name = self.kind

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, shape):
        return tuple(shape)

    def madd(self, shape) -> int:
        return 0

    def n_params(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class Conv1x1(Layer):
    kind = "conv1x1"

    def __init__(self, c_in: int, c_out: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out = c_in, c_out
        self.params["w"] = xavier(rng, (c_in, c_out), c_in, c_out)

    def forward(self, x, train=False):
        self._x = x
        n, h, w, _ = x.shape
        return matmul(x.reshape(-1, self.c_in), self.params["w"]).reshape(n, h, w, self.c_out)

    def backward(self, dy):
        flat_x = self._x.reshape(-1, self.c_in)
        flat_dy = dy.reshape(-1, self.c_out)
        self.grads["w"] = matmul(flat_x.T, flat_dy)
        return matmul(flat_dy, self.params["w"].T).reshape(self._x.shape)

    def out_shape(self, shape):
        return (shape[0], shape[1], self.c_out)

    def madd(self, shape):
        return costmodel.madd_of("conv1x1", shape, c_out=self.c_out)


def _shifted_windows(xp: np.ndarray, ho: int, wo: int, stride: int):
    """Yield ``(di, dj, view)`` for the nine 3x3 taps of a padded batch."""
    for di in range(3):
        for dj in range(3):
            yield di, dj, xp[:, di : di + stride * (ho - 1) + 1 : stride, dj : dj + stride * (wo - 1) + 1 : stride, :]


class Conv3x3(Layer):
    """Dense 3x3 convolution, padding 1; output size ``ceil(input / stride)``."""

    kind = "conv3x3"

    def __init__(self, c_in: int, c_out: int, stride: int = 1, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.params["w"] = xavier(rng, (9 * c_in, c_out), 9 * c_in, 9 * c_out)

    def forward(self, x, train=False):
        n, h, w, _ = x.shape
        ho, wo = _out_size(h, self.stride), _out_size(w, self.stride)
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        cols = np.concatenate([v for _, _, v in _shifted_windows(xp, ho, wo, self.stride)], axis=-1)
        self._x_shape, self._cols = x.shape, cols
        return matmul(cols.reshape(-1, 9 * self.c_in), self.params["w"]).reshape(n, ho, wo, self.c_out)

    def backward(self, dy):
        n, h, w, c = self._x_shape
        ho, wo = dy.shape[1:3]
        flat_dy = dy.reshape(-1, self.c_out)
        self.grads["w"] = matmul(self._cols.reshape(-1, 9 * c).T, flat_dy)
        dcols = matmul(flat_dy, self.params["w"].T).reshape(n, ho, wo, 9 * c)
        dxp = np.zeros((n, h + 2, w + 2, c))
        for di, dj, view in _shifted_windows(dxp, ho, wo, self.stride):
            tap = 3 * di + dj
            view += dcols[..., tap * c : (tap + 1) * c]
        return dxp[:, 1:-1, 1:-1, :]

    def out_shape(self, shape):
        return (_out_size(shape[0], self.stride), _out_size(shape[1], self.stride), self.c_out)

    def madd(self, shape):
        return costmodel.madd_of("conv3x3", shape, c_out=self.c_out, stride=self.stride)


class DWConv3x3(Layer):
    """Depth-wise 3x3 convolution, padding 1; output size ``ceil(input / stride)``."""

    kind = "dwconv3x3"

    def __init__(self, c: int, stride: int = 1, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.c, self.stride = c, stride
        self.params["w"] = xavier(rng, (3, 3, c), 9, 9)

    def forward(self, x, train=False):
        n, h, w, c = x.shape
        ho, wo = _out_size(h, self.stride), _out_size(w, self.stride)
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        self._xp = xp
        wt = self.params["w"]
        y = np.zeros((n, ho, wo, c))
        for di, dj, view in _shifted_windows(xp, ho, wo, self.stride):
            y += view * wt[di, dj]
        return y

    def backward(self, dy):
        ho, wo = dy.shape[1:3]
        wt = self.params["w"]
        dw = np.zeros_like(wt)
        dxp = np.zeros_like(self._xp)
        for (di, dj, view), (_, _, dview) in zip(
            _shifted_windows(self._xp, ho, wo, self.stride), _shifted_windows(dxp, ho, wo, self.stride)
        ):
            dw[di, dj] = (view * dy).sum(axis=(0, 1, 2))
            dview += dy * wt[di, dj]
        self.grads["w"] = dw
        return dxp[:, 1:-1, 1:-1, :]

    def out_shape(self, shape):
        return (_out_size(shape[0], self.stride), _out_size(shape[1], self.stride), shape[2])

    def madd(self, shape):
        return costmodel.madd_of("dwconv3x3", shape, stride=self.stride)


class BatchNorm(Layer):
    """Per-channel batch norm; batch statistics in training, stored statistics otherwise."""

    kind = "batchnorm"

    def __init__(self, c: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.c, self.eps, self.momentum = c, eps, momentum
        self.params["gamma"] = np.ones(c)
        self.params["beta"] = np.zeros(c)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)

    def forward(self, x, train=False):
        if train:
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._train, self._xhat, self._inv_std = train, xhat, inv_std
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dy):
        xhat = self._xhat
        self.grads["gamma"] = (dy * xhat).sum(axis=(0, 1, 2))
        self.grads["beta"] = dy.sum(axis=(0, 1, 2))
        dxhat = dy * self.params["gamma"]
        if not self._train:
            return dxhat * self._inv_std
        m = dy.shape[0] * dy.shape[1] * dy.shape[2]
        return (self._inv_std / m) * (
            m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2))
        )


class ReLU6(Layer):
    kind = "activation"

    def forward(self, x, train=False):
        self._mask = (x > 0) & (x < 6)
        return np.clip(x, 0.0, 6.0)

    def backward(self, dy):
        return dy * self._mask


class AvgPool(Layer):
    """Spatial average pooling, kernel = stride = ``size``, ceil mode."""

    kind = "avgpool"

    def __init__(self, size: int):
        super().__init__()
        self.size = size

    def forward(self, x, train=False):
        self._hw = x.shape[1:3]
        return avg_pool(x, self.size)

    def backward(self, dy):
        return avg_pool_backward(dy, *self._hw, self.size)

    def out_shape(self, shape):
        return (pooled_size(shape[0], self.size), pooled_size(shape[1], self.size), shape[2])


class GlobalAvgPool(Layer):
    kind = "avgpool_global"

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dy):
        n, h, w, c = self._shape
        return np.broadcast_to(dy[:, None, None, :] / (h * w), self._shape).copy()

    def out_shape(self, shape):
        return (1, 1, shape[2])


class Linear(Layer):
    """Fully connected layer with bias on ``(N, c_in)`` inputs."""

    kind = "fully_connected"

    def __init__(self, c_in: int, c_out: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out = c_in, c_out
        self.params["w"] = xavier(rng, (c_in, c_out), c_in, c_out)
        self.params["b"] = np.zeros(c_out)

    def forward(self, x, train=False):
        self._x = x
        return matmul(x, self.params["w"]) + self.params["b"]

    def backward(self, dy):
        self.grads["w"] = matmul(self._x.T, dy)
        self.grads["b"] = dy.sum(axis=0)
        return matmul(dy, self.params["w"].T)

    def out_shape(self, shape):
        return (1, 1, self.c_out)

    def madd(self, shape):
        return costmodel.madd_of("fully_connected", (1, 1, self.c_in), c_out=self.c_out)


class Attention(Layer):
    """Attention operator of a given kind with a ``c x c`` value transform.

    Optionally carries a :class:`~kronattn.attention.CoeffNorm`, which adds two
    parameters but stays fixed during training here.
    """

    kind = "attention"

    def __init__(self, kind: str, c: int, coeff_norm: Optional[CoeffNorm] = None,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        get_operator(kind)
        self.attention_kind, self.c, self.coeff_norm = kind, c, coeff_norm
        self.name = f"attention:{kind}"
        self.params["wv"] = xavier(rng, (c, c), c, c)

    def _cfg(self):
        return AttnConfig(wv=self.params["wv"], coeff_norm=self.coeff_norm)

    def forward(self, x, train=False):
        self._x = x
        op, cfg = get_operator(self.attention_kind), self._cfg()
        return np.stack([op(sample, cfg) for sample in x])

    def backward(self, dy):
        grad_fn, cfg = OPERATOR_GRADS[self.attention_kind], self._cfg()
        dx = np.empty_like(self._x)
        dwv = np.zeros_like(self.params["wv"])
        for i, (sample, d_sample) in enumerate(zip(self._x, dy)):
            dx[i], wgrads = grad_fn(sample, d_sample, cfg)
            dwv += wgrads["dwv"]
        self.grads["wv"] = dwv
        return dx

    def n_params(self):
        return super().n_params() + (CoeffNorm.n_params if self.coeff_norm is not None else 0)

    def madd(self, shape):
        return costmodel.madd_of(self.attention_kind, shape, value_transform=True)


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def madd(self, shape):
        total = 0
        for layer in self.layers:
            total += layer.madd(shape)
            shape = layer.out_shape(shape)
        return total

    def n_params(self):
        return sum(layer.n_params() for layer in self.layers)


def conv_bn(conv: Layer, c_out: int, activation: bool = True, batchnorm: bool = True) -> Sequential:
    """``conv -> batch norm -> ReLU6``; the activation is dropped for linear projections."""
    layers = [conv]
    if batchnorm:
        layers.append(BatchNorm(c_out))
    if activation:
        layers.append(ReLU6())
    return Sequential(*layers)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
