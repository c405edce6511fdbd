"""Dense float64 kernels used by every other module.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and rank 1..4,
stored C-contiguous (row-major, last index fastest).  Convolutions use the
cross-correlation convention: the kernel is never flipped.
"""
from __future__ import annotations

from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError

Padding = Literal["same_zero", "valid"]
OutOfBounds = Literal["zero", "clamp"]


def as_tensor(x, ndim: int | tuple[int, ...] | None = None) -> np.ndarray:
    """Return ``x`` as a contiguous float64 array, optionally checking its rank."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 0 or arr.ndim > 4:
        raise DimensionError(f"tensor rank must be 1..4, got {arr.ndim}")
    if 0 in arr.shape:
        raise DimensionError(f"tensor extents must be >= 1, got {arr.shape}")
    if ndim is not None:
        allowed = (ndim,) if isinstance(ndim, int) else ndim
        if arr.ndim not in allowed:
            raise DimensionError(f"expected rank in {allowed}, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a, 2)
    b = as_tensor(b, 2)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def _pad_same(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = kh // 2, kw // 2
    return np.pad(x, [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)])


def im2col(x: np.ndarray, kh: int, kw: int, padding: Padding = "same_zero") -> np.ndarray:
    """Patch matrix of ``x`` (N, C, H, W) with shape (N, H', W', C*kh*kw).

    The last axis is ordered (channel, kernel row, kernel col), matching a
    kernel of shape (F, C, kh, kw) reshaped to (F, C*kh*kw).
    """
    if padding == "same_zero":
        x = _pad_same(x, kh, kw)
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # N, C, H', W', kh, kw
    n, c, ho, wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, c * kh * kw)


def col2im(cols: np.ndarray, shape: tuple[int, ...], kh: int, kw: int, padding: Padding = "same_zero") -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to (N, C, H, W)."""
    n, c, h, w = shape
    ph, pw = (kh // 2, kw // 2) if padding == "same_zero" else (0, 0)
    ho, wo = cols.shape[1], cols.shape[2]
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
    patches = cols.reshape(n, ho, wo, c, kh, kw)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + ho, j:j + wo] += patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out[:, :, ph:ph + h, pw:pw + w]


def conv2d(x, kernel, padding: Padding = "same_zero", bias=None) -> np.ndarray:
    """2-D cross-correlation of ``x`` (C, H, W) or (N, C, H, W) with ``kernel`` (F, C, kh, kw)."""
    x = as_tensor(x, (3, 4))
    kernel = as_tensor(kernel, 4)
    batched = x.ndim == 4
    if not batched:
        x = x[None]
    f, c, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"kernel extents must be odd, got {kh}x{kw}")
    if x.shape[1] != c:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {c}")
    cols = im2col(x, kh, kw, padding)
    out = cols @ kernel.reshape(f, -1).T  # N, H', W', F
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    return out if batched else out[0]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError("softmax input contains non-finite values")
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def bilinear_sample_grid(img, xs, ys, oob: OutOfBounds = "zero") -> np.ndarray:
    """Vectorised bilinear interpolation of a 2-D image at pixel coordinates.

    ``xs`` indexes columns, ``ys`` rows; pixel (r, c) sits at (x=c, y=r).
    With ``oob="zero"`` any sample outside [0, W-1] x [0, H-1] is 0.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if oob == "clamp":
        xs = np.clip(xs, 0.0, w - 1)
        ys = np.clip(ys, 0.0, h - 1)
        inside = None
    elif oob == "zero":
        inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
        xs = np.where(inside, xs, 0.0)
        ys = np.where(inside, ys, 0.0)
    else:
        raise ValueError(f"unknown out-of-bounds mode {oob!r}")
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 1)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    if inside is not None:
        out = np.where(inside, out, 0.0)
    return out


def bilinear_sample(img, x: float, y: float, oob: OutOfBounds = "zero") -> float:
    return float(bilinear_sample_grid(img, np.array([x]), np.array([y]), oob)[0])
