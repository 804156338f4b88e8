"""Minimal batched conv/linear/relu layers with hand-written backward passes.

Everything runs in float64 numpy. Each layer caches what its backward pass
needs during forward and accumulates parameter gradients into ``.grad``
buffers; ``zero_grads`` resets them between batches.
"""

from __future__ import annotations

import math

import numpy as np


class Param:
    """A named parameter tensor with an accumulated gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Unfold (B, C, H, W) into (B, C*k*k, OH*OW) patch columns."""
    b, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((b, c, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(b, c * k * k, oh * ow)


def col2im(cols: np.ndarray, x_shape, k: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add patch columns back into an input-shaped gradient."""
    b, c, h, w = x_shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(b, c, k, k, oh, ow)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    return xp[:, :, pad : pad + h, pad : pad + w]


class Conv2d:
    def __init__(self, name: str, in_ch: int, out_ch: int, rng: np.random.Generator,
                 ksize: int = 3, stride: int = 1, pad: int = 1):
        self.ksize = ksize
        self.stride = stride
        self.pad = pad
        fan_in = in_ch * ksize * ksize
        self.weight = Param(f"{name}.weight", he_normal(rng, (out_ch, in_ch, ksize, ksize), fan_in))
        self.bias = Param(f"{name}.bias", np.zeros(out_ch))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        b = x.shape[0]
        out_ch = self.weight.value.shape[0]
        cols = im2col(x, self.ksize, self.stride, self.pad)
        wmat = self.weight.value.reshape(out_ch, -1)
        y = np.matmul(wmat[None], cols) + self.bias.value[None, :, None]
        oh = (x.shape[2] + 2 * self.pad - self.ksize) // self.stride + 1
        ow = (x.shape[3] + 2 * self.pad - self.ksize) // self.stride + 1
        self._cache = (x.shape, cols)
        return y.reshape(b, out_ch, oh, ow)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x_shape, cols = self._cache
        b, out_ch = dy.shape[0], dy.shape[1]
        dyf = dy.reshape(b, out_ch, -1)
        self.weight.grad += np.einsum("bop,bkp->ok", dyf, cols).reshape(self.weight.value.shape)
        self.bias.grad += dyf.sum(axis=(0, 2))
        wmat = self.weight.value.reshape(out_ch, -1)
        dcols = np.matmul(wmat.T[None], dyf)
        return col2im(dcols, x_shape, self.ksize, self.stride, self.pad)


class Linear:
    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Param(f"{name}.weight", he_normal(rng, (out_dim, in_dim), in_dim))
        self.bias = Param(f"{name}.bias", np.zeros(out_dim))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._cache
        self.weight.grad += dy.T @ x
        self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.value


class ReLU:
    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dy, 0.0)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
