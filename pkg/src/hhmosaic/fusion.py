"""Non-local query/key/value fusion head.

For every output position ``i``::

    y_i = G(q_i) * sum_j w_ij G(q_j),   w_ij = softmax_j( (W_theta v_i) . (W_phi k_j) )

with ``G(x) = W_g x`` a 1x1 convolution and ``*`` the elementwise product.
``j`` runs over the 3x3 window around ``i`` (``eight_neighbor``, the window
clipped at the border and including ``i`` itself) or over every position
(``all_positions``).  The softmax is the normalised exponential pairwise
affinity ``exp(theta . phi) / sum exp(theta . phi)``.

Arrays are (C, H, W) or batched (N, C, H, W).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DimensionError

Neighborhood = Literal["eight_neighbor", "all_positions"]
OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


@dataclass
class FusionHead:
    w_theta: np.ndarray  # (C', C)
    w_phi: np.ndarray  # (C', C)
    w_g: np.ndarray  # (C, C)
    neighborhood: Neighborhood = "eight_neighbor"

    def __post_init__(self):
        self.w_theta = np.asarray(self.w_theta, dtype=np.float64)
        self.w_phi = np.asarray(self.w_phi, dtype=np.float64)
        self.w_g = np.asarray(self.w_g, dtype=np.float64)
        cp, c = self.w_theta.shape
        if self.w_phi.shape != (cp, c) or self.w_g.shape != (c, c) or cp > c:
            raise DimensionError(
                f"inconsistent fusion weights theta{self.w_theta.shape} phi{self.w_phi.shape} g{self.w_g.shape}")
        if self.neighborhood not in ("eight_neighbor", "all_positions"):
            raise ValueError(f"unknown neighborhood {self.neighborhood!r}")

    @property
    def channels(self) -> int:
        return self.w_g.shape[0]

    @classmethod
    def init(cls, channels: int, embed: int, rng: np.random.Generator,
             neighborhood: Neighborhood = "eight_neighbor") -> "FusionHead":
        def glorot(fo, fi):
            s = math.sqrt(6.0 / (fi + fo))
            return rng.uniform(-s, s, (fo, fi))
        return cls(glorot(embed, channels), glorot(embed, channels), glorot(channels, channels), neighborhood)


@dataclass
class FrameTriple:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if not (np.shape(self.q) == np.shape(self.k) == np.shape(self.v)):
            raise DimensionError("query, key and value features must share one shape")


def pairwise_gaussian(vi, kj) -> float:
    vi, kj = np.asarray(vi, dtype=np.float64), np.asarray(kj, dtype=np.float64)
    if vi.shape != kj.shape:
        raise DimensionError(f"channel mismatch {vi.shape} vs {kj.shape}")
    return math.exp(float(vi @ kj))


def pairwise_embedded(head: FusionHead, vi, kj) -> float:
    return pairwise_gaussian(head.w_theta @ np.asarray(vi, dtype=np.float64),
                             head.w_phi @ np.asarray(kj, dtype=np.float64))


def _channel_mix(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("oc,nchw->nohw", w, x)


def _shifted(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``out[..., h, w] = x[..., h+dy, w+dx]``, zero where out of range."""
    h, w = x.shape[-2:]
    out = np.zeros_like(x)
    out[..., max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)] = \
        x[..., max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)]
    return out


def _window_valid(h: int, w: int) -> np.ndarray:
    ones = np.ones((h, w))
    return np.stack([_shifted(ones, dy, dx) for dy, dx in OFFSETS]) > 0  # (9, H, W)


def _check(head: FusionHead, q, k, v):
    arrs = [np.asarray(a, dtype=np.float64) for a in (q, k, v)]
    if not (arrs[0].shape == arrs[1].shape == arrs[2].shape):
        raise DimensionError("query, key and value features must share one shape")
    if arrs[0].ndim not in (3, 4):
        raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got {arrs[0].shape}")
    if arrs[0].shape[-3] != head.channels:
        raise DimensionError(f"features have {arrs[0].shape[-3]} channels, head expects {head.channels}")
    return arrs


def fuse_forward(head: FusionHead, q, k, v):
    """Fused map and the cache needed by :func:`fuse_backward_cached`."""
    q, k, v = _check(head, q, k, v)
    single = q.ndim == 3
    if single:
        q, k, v = q[None], k[None], v[None]
    theta = _channel_mix(head.w_theta, v)
    phi = _channel_mix(head.w_phi, k)
    gq = _channel_mix(head.w_g, q)
    n, c, h, w = gq.shape
    if head.neighborhood == "eight_neighbor":
        valid = _window_valid(h, w)
        scores = np.stack([(theta * _shifted(phi, dy, dx)).sum(axis=1) for dy, dx in OFFSETS], axis=1)
        scores = np.where(valid[None], scores, -np.inf)
        scores -= scores.max(axis=1, keepdims=True)
        wts = np.exp(scores)
        wts /= wts.sum(axis=1, keepdims=True)  # (N, 9, H, W)
        agg = np.zeros_like(gq)
        for o, (dy, dx) in enumerate(OFFSETS):
            agg += wts[:, o:o + 1] * _shifted(gq, dy, dx)
    else:
        tf, pf, gf = theta.reshape(n, -1, h * w), phi.reshape(n, -1, h * w), gq.reshape(n, c, h * w)
        scores = np.einsum("nci,ncj->nij", tf, pf)
        scores -= scores.max(axis=2, keepdims=True)
        wts = np.exp(scores)
        wts /= wts.sum(axis=2, keepdims=True)  # (N, HW_i, HW_j)
        agg = np.einsum("nij,ncj->nci", wts, gf).reshape(n, c, h, w)
    y = gq * agg
    cache = (q, k, v, theta, phi, gq, wts, agg, single)
    return (y[0] if single else y), cache


def fuse(head: FusionHead, x: FrameTriple) -> np.ndarray:
    return fuse_forward(head, x.q, x.k, x.v)[0]


def attention_weights(head: FusionHead, x: FrameTriple) -> np.ndarray:
    """Per-position weights: (9, H, W) window weights or (HW, HW) for ``all_positions``."""
    _, cache = fuse_forward(head, x.q, x.k, x.v)
    wts = cache[6]
    return wts[0] if cache[-1] else wts


def fuse_backward_cached(head: FusionHead, cache, upstream) -> dict[str, np.ndarray]:
    q, k, v, theta, phi, gq, wts, agg, single = cache
    dy = np.asarray(upstream, dtype=np.float64)
    if single:
        dy = dy[None]
    if dy.shape != gq.shape:
        raise DimensionError(f"upstream gradient shape {dy.shape} != output shape {gq.shape}")
    n, c, h, w = gq.shape
    d_gq = dy * agg
    d_agg = dy * gq
    if head.neighborhood == "eight_neighbor":
        d_w = np.empty_like(wts)
        for o, (oy, ox) in enumerate(OFFSETS):
            d_w[:, o] = (d_agg * _shifted(gq, oy, ox)).sum(axis=1)
            d_gq += _shifted(wts[:, o:o + 1] * d_agg, -oy, -ox)
        d_s = wts * (d_w - (wts * d_w).sum(axis=1, keepdims=True))
        d_theta = np.zeros_like(theta)
        d_phi = np.zeros_like(phi)
        for o, (oy, ox) in enumerate(OFFSETS):
            ds = d_s[:, o:o + 1]
            d_theta += ds * _shifted(phi, oy, ox)
            d_phi += _shifted(ds * theta, -oy, -ox)
    else:
        hw = h * w
        gf = gq.reshape(n, c, hw)
        da = d_agg.reshape(n, c, hw)
        d_w = np.einsum("nci,ncj->nij", da, gf)
        d_gq += np.einsum("nij,nci->ncj", wts, da).reshape(n, c, h, w)
        d_s = wts * (d_w - (wts * d_w).sum(axis=2, keepdims=True))
        tf, pf = theta.reshape(n, -1, hw), phi.reshape(n, -1, hw)
        d_theta = np.einsum("nij,ncj->nci", d_s, pf).reshape(theta.shape)
        d_phi = np.einsum("nij,nci->ncj", d_s, tf).reshape(phi.shape)
    grads = {
        "w_theta": np.einsum("nohw,nchw->oc", d_theta, v),
        "w_phi": np.einsum("nohw,nchw->oc", d_phi, k),
        "w_g": np.einsum("nohw,nchw->oc", d_gq, q),
        "q": _channel_mix(head.w_g.T, d_gq),
        "k": _channel_mix(head.w_phi.T, d_phi),
        "v": _channel_mix(head.w_theta.T, d_theta),
    }
    if single:
        for key in ("q", "k", "v"):
            grads[key] = grads[key][0]
    return grads


def fuse_backward(head: FusionHead, x: FrameTriple, upstream) -> dict[str, np.ndarray]:
    """Gradients of ``sum(upstream * fuse(head, x))`` w.r.t. weights and inputs."""
    _, cache = fuse_forward(head, x.q, x.k, x.v)
    return fuse_backward_cached(head, cache, upstream)


def fuse_bruteforce(head: FusionHead, x: FrameTriple) -> np.ndarray:
    """Direct double loop over positions: embedded exponential affinity, explicit normaliser."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (x.q, x.k, x.v))
    c, h, w = q.shape
    y = np.zeros_like(q)
    for i in range(h * w):
        ih, iw = divmod(i, w)
        acc = np.zeros(c)
        norm = 0.0
        for j in range(h * w):
            jh, jw = divmod(j, w)
            if head.neighborhood == "eight_neighbor" and (abs(jh - ih) > 1 or abs(jw - iw) > 1):
                continue
            f = pairwise_embedded(head, v[:, ih, iw], k[:, jh, jw])
            norm += f
            acc += f * (head.w_g @ q[:, jh, jw])
        y[:, ih, iw] = (head.w_g @ q[:, ih, iw]) * acc / norm
    return y
