"""Network layers with hand-derived backward passes.

Every layer works on batched arrays.  ``forward`` returns ``(output, cache)``;
``backward(cache, grad_out)`` returns ``(grad_in, param_grads)`` where
``param_grads`` lines up with ``layer.params()``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import col2im, im2col


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, shape)


@dataclass
class Conv2D:
    """3x3 (or any odd size) same-padded convolution with bias."""

    weight: np.ndarray  # (F, C, kh, kw)
    bias: np.ndarray  # (F,)

    @classmethod
    def init(cls, c_in: int, c_out: int, rng: np.random.Generator, k: int = 3, gain: float = 1.0) -> "Conv2D":
        w = gain * glorot_uniform(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k)
        return cls(w, np.zeros(c_out))

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray):
        f, c, kh, kw = self.weight.shape
        if x.ndim != 4 or x.shape[1] != c:
            raise DimensionError(f"conv expects (N, {c}, H, W), got {x.shape}")
        cols = im2col(x, kh, kw)  # N, H, W, C*kh*kw
        out = cols @ self.weight.reshape(f, -1).T + self.bias
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), (x.shape, cols)

    def backward(self, cache, gout: np.ndarray):
        shape, cols = cache
        f, c, kh, kw = self.weight.shape
        g = gout.transpose(0, 2, 3, 1).reshape(-1, f)  # N*H*W, F
        flat = cols.reshape(-1, cols.shape[-1])
        gw = (g.T @ flat).reshape(self.weight.shape)
        gb = g.sum(axis=0)
        gcols = (g @ self.weight.reshape(f, -1)).reshape(cols.shape)
        return col2im(gcols, shape, kh, kw), [gw, gb]


class ReLU:
    @staticmethod
    def forward(x: np.ndarray):
        mask = x > 0
        return x * mask, mask

    @staticmethod
    def backward(mask, gout: np.ndarray):
        return gout * mask


class MaxPool2:
    """2x2 max pooling, stride 2.  Ties route the gradient to the first maximum."""

    @staticmethod
    def forward(x: np.ndarray):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise DimensionError(f"max-pool needs even spatial extents, got {h}x{w}")
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    @staticmethod
    def backward(cache, gout: np.ndarray):
        shape, idx = cache
        n, c, h, w = shape
        blocks = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(blocks, idx[..., None], gout[..., None], axis=-1)
        return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False) -> "Dense":
        if zero:
            return cls(np.zeros((n_out, n_in)), np.zeros(n_out))
        return cls(glorot_uniform(rng, (n_out, n_in), n_in, n_out), np.zeros(n_out))

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise DimensionError(f"dense expects (N, {self.weight.shape[1]}), got {x.shape}")
        return x @ self.weight.T + self.bias, x

    def backward(self, x, gout: np.ndarray):
        return gout @ self.weight, [gout.T @ x, gout.sum(axis=0)]


class FeatureNorm:
    """Parameter-free per-sample standardisation of a flat feature vector.

    Keeps the scale of the quadratic fusion output fixed while the stem
    weights move, which is what makes plain momentum SGD stable here.
    """

    eps = 1e-10

    @classmethod
    def forward(cls, x: np.ndarray):
        mu = x.mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(x.var(axis=1, keepdims=True) + cls.eps)
        y = (x - mu) * inv
        return y, (y, inv)

    @staticmethod
    def backward(cache, gout: np.ndarray):
        y, inv = cache
        return inv * (gout - gout.mean(axis=1, keepdims=True) - y * (gout * y).mean(axis=1, keepdims=True))
