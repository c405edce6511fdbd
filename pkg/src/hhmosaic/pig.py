"""Partially Image Generation: perturbed training pairs and synthetic sequences.

Perturbations are restricted to a rotation about the frame centre plus a
translation, applied to greyscale frames.  Every generated sample carries the
exact transform that produced it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import RangeError
from .homography import AffineTransform, compose, invert, warp
from .rng import stream

MAX_ALPHA = math.radians(8.0)
MAX_SHIFT = 15.0
# per-step camera translation cap for sequences; keeps each frame-to-frame
# shift inside the +-15 px box whatever the camera orientation
MAX_STEP = 12.0

Motion = Literal["spiral", "circular", "freehand"]
Texture = Literal["procedural_vessels", "from_file"]


def to_grayscale(r, g, b):
    """Lightness ``(max(R,G,B) + min(R,G,B)) / 2``; scalars or same-shape arrays."""
    rgb = np.stack(np.broadcast_arrays(*(np.asarray(c, dtype=np.float64) for c in (r, g, b))))
    if np.any(rgb < 0.0) or np.any(rgb > 1.0) or not np.all(np.isfinite(rgb)):
        raise RangeError("RGB components must lie in [0, 1]")
    y = (rgb.max(axis=0) + rgb.min(axis=0)) / 2.0
    return float(y) if y.ndim == 0 else y


def rgb_to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got {img.shape}")
    return to_grayscale(img[..., 0], img[..., 1], img[..., 2])


@dataclass(frozen=True)
class PigParams:
    alpha: float  # radians
    dx: float
    dy: float

    def __post_init__(self):
        if not (abs(self.alpha) <= MAX_ALPHA + 1e-12):
            raise RangeError(f"rotation {math.degrees(self.alpha):.4f} deg outside +-8 deg")
        if not (abs(self.dx) <= MAX_SHIFT and abs(self.dy) <= MAX_SHIFT):
            raise RangeError(f"translation ({self.dx}, {self.dy}) outside +-15 px")


def frame_center(width: int, height: int) -> tuple[float, float]:
    return ((width - 1) / 2.0, (height - 1) / 2.0)


def params_to_affine(params: PigParams, width: int, height: int) -> AffineTransform:
    return AffineTransform.rigid(params.alpha, params.dx, params.dy, frame_center(width, height))


def affine_to_params(t: AffineTransform, width: int, height: int) -> PigParams:
    """Recover (alpha, dx, dy) of a rigid map about the frame centre."""
    cx, cy = frame_center(width, height)
    alpha = math.atan2(t.b, t.a)
    px, py = t.apply((cx, cy))
    return PigParams(alpha, float(px - cx), float(py - cy))


@dataclass
class PigRecord:
    frame_a: np.ndarray
    frame_b: np.ndarray
    params: PigParams
    truth: AffineTransform


def perturb(frame, params: PigParams) -> PigRecord:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValueError("perturb expects a single-channel frame")
    if not isinstance(params, PigParams):
        params = PigParams(*params)
    h, w = frame.shape
    truth = params_to_affine(params, w, h)
    return PigRecord(frame, warp(frame, truth, w, h, oob="zero"), params, truth)


def sample_params(rng: np.random.Generator) -> PigParams:
    alpha, dx, dy = rng.uniform([-MAX_ALPHA, -MAX_SHIFT, -MAX_SHIFT], [MAX_ALPHA, MAX_SHIFT, MAX_SHIFT])
    return PigParams(float(alpha), float(dx), float(dy))


def _draw_vessel(acc: np.ndarray, rng: np.random.Generator, x: float, y: float, heading: float,
                 width: float, length: int, depth: int):
    h, w = acc.shape
    for _ in range(length):
        heading += rng.normal(0.0, 0.12)
        x += math.cos(heading)
        y += math.sin(heading)
        if not (-4 <= x < w + 4 and -4 <= y < h + 4):
            return
        xi, yi = int(round(x)), int(round(y))
        if 0 <= xi < w and 0 <= yi < h:
            acc[yi, xi] = max(acc[yi, xi], width)
        width = max(0.8, width * 0.997)
        if depth < 3 and rng.random() < 0.012:
            turn = rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 1.1)
            _draw_vessel(acc, rng, x, y, heading + turn, width * 0.7, int(length * 0.6), depth + 1)


def vessel_texture(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Vessel-like texture: dark branching curves on a bright mottled background.

    The result is low-pass filtered so bilinear resampling error stays small.
    """
    bg = 0.72 + 0.12 * _unit_noise(rng, (height, width), sigma=max(width, height) / 10.0)
    bg += 0.05 * _unit_noise(rng, (height, width), sigma=2.0)
    skel = np.zeros((height, width))
    n_trees = max(3, int(round(width * height / 8000)))
    for _ in range(n_trees):
        x, y = rng.uniform(0, width), rng.uniform(0, height)
        _draw_vessel(skel, rng, x, y, rng.uniform(0, 2 * math.pi), rng.uniform(2.0, 4.0),
                     int(rng.integers(width // 2, width + height)), 0)
    vessels = np.zeros_like(skel)
    for lo, hi, sigma in ((0.0, 1.6, 0.9), (1.6, 2.8, 1.5), (2.8, 10.0, 2.2)):
        m = ((skel > lo) & (skel <= hi)).astype(np.float64)
        if m.any():
            vessels += gaussian_filter(m, sigma) * (2 * math.pi * sigma**2) ** 0.5
    img = bg - 0.45 * np.clip(vessels, 0.0, 1.0)
    return np.clip(gaussian_filter(img, 1.0), 0.0, 1.0)


def _unit_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    n = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return n / (n.std() + 1e-12)


def make_pig_dataset(n: int, size: int, seed: int) -> list[PigRecord]:
    """``n`` independent PIG pairs of ``size`` x ``size``; record ``i`` depends only on (seed, i)."""
    out = []
    for i in range(n):
        rng = stream(seed, 0, i)
        tex = vessel_texture(size, size, rng)
        out.append(perturb(tex, sample_params(rng)))
    return out


@dataclass(frozen=True)
class SequenceSpec:
    motion: Motion = "circular"
    frames: int = 50
    size: int = 128
    seed: int = 0
    texture: Texture = "procedural_vessels"
    texture_path: str | None = None

    def __post_init__(self):
        if self.motion not in ("spiral", "circular", "freehand"):
            raise ValueError(f"unknown motion {self.motion!r}")
        if self.frames < 2:
            raise ValueError("a sequence needs at least 2 frames")
        if self.size < 64:
            raise ValueError("frame size must be at least 64 px")
        if self.texture == "from_file" and not self.texture_path:
            raise ValueError("texture 'from_file' needs a texture_path")


@dataclass
class SyntheticSequence:
    frames: list[np.ndarray]
    relative: list[AffineTransform]  # relative[t] maps frame-t coords into frame t-1; relative[0] = identity
    params: list[PigParams]
    poses: list[AffineTransform]  # frame-t coords -> texture coords
    texture: np.ndarray = field(repr=False)
    path_radius: float = 0.0


def _scale_to_step(points: np.ndarray, cap: float) -> np.ndarray:
    steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    biggest = steps.max() if len(steps) else 0.0
    return points * (cap / biggest) if biggest > cap else points


def _cap_turn(theta: np.ndarray, cap: float) -> np.ndarray:
    steps = np.abs(np.diff(theta))
    biggest = steps.max() if len(steps) else 0.0
    return theta * (cap / biggest) if biggest > cap else theta


def camera_path(spec: SequenceSpec) -> tuple[np.ndarray, np.ndarray, float]:
    """Camera centres (N, 2) relative to the start, orientations (N,) and path radius."""
    n, s = spec.frames, spec.size
    t = np.arange(n) / (n - 1)
    if spec.motion == "circular":
        r = min(0.35 * s, 0.8 * MAX_STEP * (n - 1) / (2 * math.pi))
        phi = 2 * math.pi * t
        pts = r * np.stack([np.cos(phi) - 1.0, np.sin(phi)], axis=1)
        theta = _cap_turn(math.radians(10.0) * np.sin(phi), 0.8 * MAX_ALPHA)
        return pts, theta, r
    if spec.motion == "spiral":
        turns = 2.0
        phi = 2 * math.pi * turns * t
        radius = 0.1 * s + 0.5 * s * t
        pts = np.stack([radius * np.cos(phi) - radius[0], radius * np.sin(phi)], axis=1)
        pts = _scale_to_step(pts, MAX_STEP)
        theta = _cap_turn(math.radians(15.0) * np.sin(math.pi * t), 0.8 * MAX_ALPHA)
        return pts, theta, float(np.linalg.norm(pts, axis=1).max())
    rng = stream(spec.seed, 1)
    pts = np.zeros((n, 2))
    theta = np.zeros(n)
    vel = np.zeros(2)
    for i in range(1, n):
        vel = 0.85 * vel + rng.normal(0.0, 3.0, 2) - 0.01 * pts[i - 1]
        norm = np.linalg.norm(vel)
        if norm > MAX_STEP:
            vel *= MAX_STEP / norm
        pts[i] = pts[i - 1] + vel
        theta[i] = theta[i - 1] + float(np.clip(rng.normal(0.0, math.radians(1.5)) - 0.05 * theta[i - 1],
                                                -math.radians(6.0), math.radians(6.0)))
    return pts, theta, float(np.linalg.norm(pts, axis=1).max())


def generate_sequence_full(spec: SequenceSpec) -> SyntheticSequence:
    from .imageio import read_pgm

    s = spec.size
    c = frame_center(s, s)
    pts, theta, radius = camera_path(spec)
    centers = pts + np.asarray(c)
    # poses in a provisional world frame, then shifted so the texture covers every frame
    poses = [AffineTransform.rigid(float(a), float(p[0] - c[0]), float(p[1] - c[1]), c) for p, a in zip(centers, theta)]
    # relative motions are snapped to the rigid-about-centre form, then poses rebuilt from them
    params = [PigParams(0.0, 0.0, 0.0)]
    relative = [AffineTransform.identity()]
    for t in range(1, len(poses)):
        p = affine_to_params(compose(invert(poses[t - 1]), poses[t]), s, s)
        params.append(p)
        relative.append(params_to_affine(p, s, s))
    chain = [AffineTransform.identity()]
    for rel in relative[1:]:
        chain.append(compose(chain[-1], rel))
    corners = np.array([[0.0, 0.0], [s - 1.0, 0.0], [s - 1.0, s - 1.0], [0.0, s - 1.0]])
    allc = np.vstack([g.apply(corners) for g in chain])
    lo = np.floor(allc.min(axis=0))
    hi = np.ceil(allc.max(axis=0))
    rng = stream(spec.seed, 2)
    if spec.texture == "procedural_vessels":
        margin = 8.0
        shift = AffineTransform.translation(margin - lo[0], margin - lo[1])
        tw, th = (hi - lo + 2 * margin + 1).astype(int)
        texture = vessel_texture(int(tw), int(th), rng)
    else:
        texture = read_pgm(Path(spec.texture_path))
        th, tw = texture.shape
        mid = (lo + hi) / 2.0
        shift = AffineTransform.translation((tw - 1) / 2.0 - mid[0], (th - 1) / 2.0 - mid[1])
    world = [compose(shift, g) for g in chain]
    frames = [warp(texture, invert(pose), s, s, oob="zero") for pose in world]
    return SyntheticSequence(frames, relative, params, world, texture, radius)


def generate_sequence(spec: SequenceSpec) -> list[tuple[np.ndarray, AffineTransform]]:
    seq = generate_sequence_full(spec)
    return list(zip(seq.frames, seq.relative))
