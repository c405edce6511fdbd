"""Three-point homography parameterisation, affine algebra and image warping.

A relative homography is the 6-DoF affine map ``[x', y'] = A [x, y] + t``.
It is parameterised by the displacements of three patch corners
(top-left, top-right, bottom-right); the bottom-left corner follows from the
parallelogram identity, since affine maps preserve it.

Points are ``(x, y)`` with ``x`` the column and ``y`` the row of a pixel centre.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateGeometryError, FormatError
from .tensor import OutOfBounds, bilinear_sample_grid

DET_EPS = 1e-12


@dataclass(frozen=True)
class AffineTransform:
    a: float
    b: float
    tx: float
    c: float
    d: float
    ty: float

    def __post_init__(self):
        vals = (self.a, self.b, self.tx, self.c, self.d, self.ty)
        if not all(math.isfinite(v) for v in vals):
            raise DegenerateGeometryError(f"non-finite affine coefficients {vals}")
        if abs(self.a * self.d - self.b * self.c) <= DET_EPS:
            raise DegenerateGeometryError(f"singular affine transform {vals}")

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineTransform":
        return cls(1.0, 0.0, float(tx), 0.0, 1.0, float(ty))

    @classmethod
    def from_matrix(cls, m) -> "AffineTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape == (3, 3):
            m = m[:2]
        if m.shape != (2, 3):
            raise ValueError(f"expected a 2x3 or 3x3 matrix, got {m.shape}")
        return cls(*(float(v) for v in m.ravel()))

    @classmethod
    def rigid(cls, alpha: float, dx: float, dy: float, center=(0.0, 0.0)) -> "AffineTransform":
        """Rotation by ``alpha`` about ``center`` followed by a shift of (dx, dy).

        Uses the rotation matrix [[cos, sin], [-sin, cos]], which in image
        coordinates (y pointing down) turns counter-clockwise on screen.
        """
        ca, sa = math.cos(alpha), math.sin(alpha)
        cx, cy = center
        tx = cx - (ca * cx + sa * cy) + dx
        ty = cy - (-sa * cx + ca * cy) + dy
        return cls(ca, sa, tx, -sa, ca, ty)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b, self.tx], [self.c, self.d, self.ty]])

    @property
    def homogeneous(self) -> np.ndarray:
        return np.vstack([self.matrix, [0.0, 0.0, 1.0]])

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def as_tuple(self) -> tuple[float, ...]:
        return (self.a, self.b, self.tx, self.c, self.d, self.ty)

    def apply(self, pts) -> np.ndarray:
        """Map one point (shape (2,)) or many (shape (N, 2))."""
        p = np.asarray(pts, dtype=np.float64)
        x, y = p[..., 0], p[..., 1]
        return np.stack([self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty], axis=-1)

    def __matmul__(self, inner: "AffineTransform") -> "AffineTransform":
        return compose(self, inner)

    def inverse(self) -> "AffineTransform":
        return invert(self)


def compose(outer: AffineTransform, inner: AffineTransform) -> AffineTransform:
    """The map ``p -> outer(inner(p))``."""
    a = outer.a * inner.a + outer.b * inner.c
    b = outer.a * inner.b + outer.b * inner.d
    c = outer.c * inner.a + outer.d * inner.c
    d = outer.c * inner.b + outer.d * inner.d
    tx = outer.a * inner.tx + outer.b * inner.ty + outer.tx
    ty = outer.c * inner.tx + outer.d * inner.ty + outer.ty
    return AffineTransform(a, b, tx, c, d, ty)


def invert(t: AffineTransform) -> AffineTransform:
    det = t.det
    if abs(det) <= DET_EPS:
        raise DegenerateGeometryError("cannot invert a singular transform")
    ia, ib = t.d / det, -t.b / det
    ic, id_ = -t.c / det, t.a / det
    return AffineTransform(ia, ib, -(ia * t.tx + ib * t.ty), ic, id_, -(ic * t.tx + id_ * t.ty))


def compose_all(transforms: Iterable[AffineTransform]) -> AffineTransform:
    """Left-to-right composition: ``compose_all([t1, t2]) == t1 @ t2``."""
    out = AffineTransform.identity()
    for t in transforms:
        out = compose(out, t)
    return out


@dataclass(frozen=True)
class ThreePointDelta:
    """Displacements of the first three patch corners, in pixels."""

    dx: tuple[float, float, float]
    dy: tuple[float, float, float]

    def __post_init__(self):
        if len(self.dx) != 3 or len(self.dy) != 3:
            raise ValueError("exactly three corner displacements are required")

    @classmethod
    def zeros(cls) -> "ThreePointDelta":
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    @classmethod
    def from_vector(cls, v) -> "ThreePointDelta":
        """Build from the 6-vector ``(dx1, dx2, dx3, dy1, dy2, dy3)``."""
        v = [float(x) for x in np.asarray(v, dtype=np.float64).ravel()]
        if len(v) != 6:
            raise ValueError(f"expected 6 values, got {len(v)}")
        return cls(tuple(v[:3]), tuple(v[3:]))

    def as_vector(self) -> np.ndarray:
        return np.array([*self.dx, *self.dy], dtype=np.float64)

    def as_points(self) -> np.ndarray:
        return np.stack([np.asarray(self.dx), np.asarray(self.dy)], axis=1)


@dataclass(frozen=True)
class PatchCorners:
    """Axis-aligned rectangle corners ordered TL, TR, BR, BL."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.shape != (4, 2):
            raise ValueError(f"expected 4 corners, got shape {p.shape}")
        (x1, y1), (x2, y2), (x3, y3), (x4, y4) = p
        if not (y1 == y2 and x2 == x3 and y3 == y4 and x4 == x1):
            raise DegenerateGeometryError("corners are not an axis-aligned rectangle in TL,TR,BR,BL order")
        if x2 <= x1 or y3 <= y2:
            raise DegenerateGeometryError("rectangle has non-positive extent")

    @classmethod
    def rectangle(cls, width: int, height: int, origin=(0.0, 0.0)) -> "PatchCorners":
        """Corners through the outermost pixel centres of a width x height patch."""
        x0, y0 = float(origin[0]), float(origin[1])
        x1, y1 = x0 + width - 1, y0 + height - 1
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)


def _solve_three_point(src: np.ndarray, dst: np.ndarray) -> AffineTransform:
    m = np.column_stack([src, np.ones(3)])
    scale = max(1.0, float(np.abs(src).max())) ** 2
    if abs(np.linalg.det(m)) <= 1e-12 * scale:
        raise DegenerateGeometryError("reference corners are collinear")
    coef = np.linalg.solve(m, dst)  # rows: x-coef, y-coef, offset
    return AffineTransform(coef[0, 0], coef[1, 0], coef[2, 0], coef[0, 1], coef[1, 1], coef[2, 1])


def affine_from_deltas(ref: PatchCorners, d: ThreePointDelta) -> AffineTransform:
    src = ref.array[:3]
    return _solve_three_point(src, src + d.as_points())


def deltas_from_affine(ref: PatchCorners, t: AffineTransform) -> ThreePointDelta:
    src = ref.array[:3]
    disp = t.apply(src) - src
    return ThreePointDelta(tuple(disp[:, 0].tolist()), tuple(disp[:, 1].tolist()))


def fourth_corner(ref: PatchCorners, t: AffineTransform) -> np.ndarray:
    """Image of the bottom-left corner, reconstructed from the three mapped corners."""
    p1, p2, p3 = t.apply(ref.array[:3])
    return p1 + p3 - p2


def map_corners(ref: PatchCorners, t: AffineTransform) -> np.ndarray:
    """All four mapped corners, the last one via :func:`fourth_corner`."""
    p = t.apply(ref.array[:3])
    return np.vstack([p, p[0] + p[2] - p[1]])


def pixel_grid(out_w: int, out_h: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    return xs, ys


def warp(img, t: AffineTransform, out_w: int, out_h: int, oob: OutOfBounds = "zero") -> np.ndarray:
    """Inverse warp: ``out(p) = img(t^-1(p))`` sampled bilinearly."""
    return warp_with_coverage(img, t, out_w, out_h, oob)[0]


def warp_with_coverage(img, t: AffineTransform, out_w: int, out_h: int, oob: OutOfBounds = "zero"):
    """Warp ``img`` and also return the per-pixel sampling weight (1 inside the source, 0 outside)."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be at least 1x1")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    inv = invert(t)
    xs, ys = pixel_grid(out_w, out_h)
    sx = inv.a * xs + inv.b * ys + inv.tx
    sy = inv.c * xs + inv.d * ys + inv.ty
    out = bilinear_sample_grid(img, sx, sy, oob)
    cover = ((sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)).astype(np.float64)
    return out, cover


def format_affine(t: AffineTransform) -> list[str]:
    """Six full-precision decimal fields ``a, b, tx, c, d, ty``."""
    return [repr(float(v)) for v in t.as_tuple()]


def parse_affine(fields: Sequence[str]) -> AffineTransform:
    if len(fields) != 6:
        raise FormatError(f"affine row needs 6 values, got {len(fields)}")
    try:
        vals = [float(f) for f in fields]
    except ValueError as exc:
        raise FormatError(f"bad affine value in {list(fields)}") from exc
    return AffineTransform(*vals)
