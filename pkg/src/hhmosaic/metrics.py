"""Drift and photometric error metrics, with per-frame drift curves."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, EmptyOverlapError
from .homography import PatchCorners
from .mosaic import HomographyChain, bounding_box, frame_corners, warp_into

# coverage threshold for a pixel to count as overlap
OVERLAP_MIN_WEIGHT = 0.5


@dataclass(frozen=True)
class FrameDrift:
    frame: int
    corner_error: float  # px
    rmse: float  # intensity in [0, 1]
    ape: float


@dataclass
class DriftReport:
    per_frame: list[FrameDrift]
    summary: dict[str, float]


def mre(pred_chain: HomographyChain, truth_chain: HomographyChain, ref: PatchCorners):
    """Per-frame mean corner distance for frames 1..T-1, and its mean."""
    if len(pred_chain.global_) != len(truth_chain.global_):
        raise DimensionError("chains differ in length")
    corners = ref.array
    per = [float(np.linalg.norm(p.apply(corners) - t.apply(corners), axis=1).mean())
           for p, t in zip(pred_chain.global_[1:], truth_chain.global_[1:])]
    return per, (float(np.mean(per)) if per else 0.0)


def _masked(a, b, mask):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    m = np.ones(a.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != a.shape:
        raise DimensionError("mask shape differs from the images")
    if not m.any():
        raise EmptyOverlapError("overlap mask is empty")
    return a[m] - b[m]


def rmse(a, b, mask=None) -> float:
    d = _masked(a, b, mask)
    return float(np.sqrt(np.mean(d * d)))


def ape(a, b, mask=None) -> float:
    return float(np.mean(np.abs(_masked(a, b, mask))))


def registered_pair(frame, pred_g, truth_g):
    """Frame warped by the predicted and the true global map onto one canvas, plus overlap mask."""
    h, w = np.shape(frame)
    c = frame_corners(w, h)
    lo, hi = bounding_box([pred_g.apply(c), truth_g.apply(c)])
    width, height = (hi - lo + 1).astype(int)
    a, ca = warp_into(frame, pred_g, lo, width, height)
    b, cb = warp_into(frame, truth_g, lo, width, height)
    return a, b, (ca >= OVERLAP_MIN_WEIGHT) & (cb >= OVERLAP_MIN_WEIGHT)


def drift_curve(pred_chain: HomographyChain, truth_chain: HomographyChain,
                frames: Sequence[np.ndarray]) -> DriftReport:
    if not (len(frames) == len(pred_chain.global_) == len(truth_chain.global_)):
        raise DimensionError("frames and chains differ in length")
    h, w = np.shape(frames[0])
    errs, _ = mre(pred_chain, truth_chain, PatchCorners.rectangle(w, h))
    rows = []
    for t in range(1, len(frames)):
        a, b, mask = registered_pair(frames[t], pred_chain.global_[t], truth_chain.global_[t])
        rows.append(FrameDrift(t, errs[t - 1], rmse(a, b, mask), ape(a, b, mask)))
    summary = {
        "corner_error": float(np.mean([r.corner_error for r in rows])) if rows else 0.0,
        "rmse": float(np.mean([r.rmse for r in rows])) if rows else 0.0,
        "ape": float(np.mean([r.ape for r in rows])) if rows else 0.0,
    }
    return DriftReport(rows, summary)
