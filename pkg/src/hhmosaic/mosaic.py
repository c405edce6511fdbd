"""Sequential mosaic compositor and the exact-correspondence oracle estimator.

Global transforms map frame-t pixel coordinates into frame-0 coordinates:
``G_0 = I`` and ``G_t = G_{t-1} o R_t`` where ``R_t`` maps frame t into frame t-1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateGeometryError, DimensionError
from .homography import AffineTransform, PatchCorners, compose, invert, warp_with_coverage

Blend = Literal["average", "last_writer"]


@dataclass
class HomographyChain:
    relative: list[AffineTransform]
    global_: list[AffineTransform]

    def __len__(self) -> int:
        return len(self.relative)


@dataclass
class MosaicCanvas:
    image: np.ndarray
    weight: np.ndarray
    origin_offset: tuple[float, float]  # frame-0 point (x, y) lands at (x + ox, y + oy) on the canvas


def oracle_estimate(corners_a, corners_b) -> AffineTransform:
    """Least-squares affine map taking ``corners_a`` onto ``corners_b``."""
    a = np.asarray(corners_a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(corners_b, dtype=np.float64).reshape(-1, 2)
    if a.shape != b.shape:
        raise DimensionError("correspondence sets differ in size")
    if len(a) < 3:
        raise DegenerateGeometryError("at least three correspondences are required")
    design = np.column_stack([a, np.ones(len(a))])
    centred = a - a.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[-1] <= 1e-9 * max(1.0, sv[0]):
        raise DegenerateGeometryError("correspondences are collinear")
    coef, *_ = np.linalg.lstsq(design, b, rcond=None)
    return AffineTransform(coef[0, 0], coef[1, 0], coef[2, 0], coef[0, 1], coef[1, 1], coef[2, 1])


def accumulate(relative: Sequence[AffineTransform]) -> HomographyChain:
    if not relative:
        raise ValueError("need at least one transform")
    if not np.allclose(relative[0].matrix, AffineTransform.identity().matrix, atol=1e-12, rtol=0):
        raise ValueError("the first relative transform must be the identity")
    glob = [AffineTransform.identity()]
    for rel in relative[1:]:
        glob.append(compose(glob[-1], rel))
    return HomographyChain(list(relative), glob)


def unwind(chain: HomographyChain) -> list[AffineTransform]:
    """Relative transforms recovered from the global ones."""
    g = chain.global_
    return [AffineTransform.identity()] + [compose(invert(g[t - 1]), g[t]) for t in range(1, len(g))]


def chain_from_global(global_: Sequence[AffineTransform]) -> HomographyChain:
    chain = HomographyChain([], list(global_))
    chain.relative = unwind(chain)
    return chain


def frame_corners(width: int, height: int) -> np.ndarray:
    return PatchCorners.rectangle(width, height).array


def bounding_box(corner_sets: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    pts = np.vstack(corner_sets)
    return np.floor(pts.min(axis=0)), np.ceil(pts.max(axis=0))


def warp_into(img, t: AffineTransform, lo: np.ndarray, width: int, height: int):
    """Warp ``img`` by ``t`` onto the canvas window whose top-left pixel sits at ``lo``.

    Only the sub-window covering the warped frame is resampled; returns the
    full-size (image, coverage) pair.
    """
    h, w = np.shape(img)
    lo_f, hi_f = bounding_box([t.apply(frame_corners(w, h))])
    x0 = int(max(lo_f[0] - lo[0], 0))
    y0 = int(max(lo_f[1] - lo[1], 0))
    x1 = int(min(hi_f[0] - lo[0], width - 1))
    y1 = int(min(hi_f[1] - lo[1], height - 1))
    out = np.zeros((height, width))
    cov = np.zeros((height, width))
    if x1 < x0 or y1 < y0:
        return out, cov
    shift = AffineTransform.translation(-(lo[0] + x0), -(lo[1] + y0))
    sub, sub_cov = warp_with_coverage(img, compose(shift, t), x1 - x0 + 1, y1 - y0 + 1)
    out[y0:y1 + 1, x0:x1 + 1] = sub
    cov[y0:y1 + 1, x0:x1 + 1] = sub_cov
    return out, cov


def render(frames: Sequence[np.ndarray], chain: HomographyChain, blend: Blend = "average") -> MosaicCanvas:
    if len(frames) != len(chain.global_):
        raise DimensionError(f"{len(frames)} frames but {len(chain.global_)} transforms")
    if blend not in ("average", "last_writer"):
        raise ValueError(f"unknown blend mode {blend!r}")
    shapes = [np.shape(f) for f in frames]
    lo, hi = bounding_box([g.apply(frame_corners(s[1], s[0])) for g, s in zip(chain.global_, shapes)])
    width, height = (hi - lo + 1).astype(int)
    acc = np.zeros((height, width))
    weight = np.zeros((height, width))
    for frame, g in zip(frames, chain.global_):
        img, cov = warp_into(frame, g, lo, width, height)
        if blend == "average":
            acc += img * cov
        else:
            acc = np.where(cov > 0, img, acc)
        weight += cov
    if blend == "average":
        image = np.divide(acc, weight, out=np.zeros_like(acc), where=weight > 0)
    else:
        image = np.where(weight > 0, acc, 0.0)
    return MosaicCanvas(np.clip(image, 0.0, 1.0), weight, (float(-lo[0]), float(-lo[1])))
