"""Pure region arithmetic.

Regions live in normalized [0, 1] coordinates (fractions of image width and
height). Everything here is immutable and reentrant.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .errors import CoordinateError, GeometryError, RegionArityError, RegionKindError

Point = tuple[float, float]

# COCO-convention area thresholds (pixels squared).
SMALL_AREA_MAX = 32**2
MEDIUM_AREA_MAX = 96**2

# perturb_box degenerate handling
_MIN_PERTURBED_AREA = 1e-6
_MIN_SIDE = 1e-3
_MAX_RETRIES = 100


class RegionKind(str, Enum):
    point = "point"
    box = "box"
    polygon = "polygon"


class SizeBucket(str, Enum):
    small = "small"
    medium = "medium"
    large = "large"


@dataclass(frozen=True)
class ImageDims:
    """Pixel extent of an image frame."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"image dims must be >= 1x1, got {self.width}x{self.height}")

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "ImageDims":
        return cls(width=int(d["width"]), height=int(d["height"]))


@dataclass(frozen=True)
class Region:
    """A normalized multi-grained referent: point, box, or polygon.

    Box regions store (min, max) corners; every coordinate is in [0, 1].
    ``source_dims`` remembers the pixel frame the region came from, when known.
    """

    kind: RegionKind
    points: tuple[Point, ...]
    source_dims: ImageDims | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))
        _check_arity(self.kind, len(self.points))
        for x, y in self.points:
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise CoordinateError(
                    f"normalized coordinate ({x}, {y}) outside [0, 1]", coordinate=(x, y)
                )
        if self.kind is RegionKind.box:
            (x1, y1), (x2, y2) = self.points
            if x1 > x2 or y1 > y2:
                raise GeometryError(f"box corners not ordered: ({x1},{y1}) vs ({x2},{y2})")

    @classmethod
    def point_at(cls, x: float, y: float, source_dims: ImageDims | None = None) -> "Region":
        return cls(RegionKind.point, ((x, y),), source_dims)

    @classmethod
    def box_at(
        cls, x1: float, y1: float, x2: float, y2: float, source_dims: ImageDims | None = None
    ) -> "Region":
        return cls(RegionKind.box, ((x1, y1), (x2, y2)), source_dims)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value, "points": [[x, y] for x, y in self.points]}
        if self.source_dims is not None:
            d["source_dims"] = self.source_dims.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        dims = d.get("source_dims")
        return cls(
            kind=RegionKind(d["kind"]),
            points=tuple((float(p[0]), float(p[1])) for p in d["points"]),
            source_dims=ImageDims.from_dict(dims) if dims else None,
        )


def _check_arity(kind: RegionKind, n: int) -> None:
    if kind is RegionKind.point and n != 1:
        raise RegionArityError(f"point region needs exactly 1 point, got {n}")
    if kind is RegionKind.box and n != 2:
        raise RegionArityError(f"box region needs exactly 2 points, got {n}")
    if kind is RegionKind.polygon and n < 3:
        raise RegionArityError(f"polygon region needs >= 3 points, got {n}")


def normalize_region(points_px: Sequence[Point], kind: RegionKind, dims: ImageDims) -> Region:
    """Map pixel coordinates into the normalized [0, 1] frame.

    Box inputs may arrive with corners in any order; they are reordered to
    (min, max) form. Raises CoordinateError for out-of-frame pixels and
    RegionArityError when the point count does not match the kind.
    """
    kind = RegionKind(kind)
    _check_arity(kind, len(points_px))
    for x, y in points_px:
        if not (0.0 <= x <= dims.width and 0.0 <= y <= dims.height):
            raise CoordinateError(
                f"pixel coordinate ({x}, {y}) outside frame {dims.width}x{dims.height}",
                coordinate=(float(x), float(y)),
            )
    pts = [(float(x) / dims.width, float(y) / dims.height) for x, y in points_px]
    if kind is RegionKind.box:
        (x1, y1), (x2, y2) = pts
        pts = [(min(x1, x2), min(y1, y2)), (max(x1, x2), max(y1, y2))]
    return Region(kind, tuple(pts), source_dims=dims)


def denormalize_region(r: Region, dims: ImageDims) -> list[Point]:
    """Map a normalized region back to pixel coordinates in the given frame."""
    return [(x * dims.width, y * dims.height) for x, y in r.points]


def _require_box(r: Region) -> tuple[float, float, float, float]:
    if r.kind is not RegionKind.box:
        raise RegionKindError(f"expected a box region, got {r.kind.value}")
    (x1, y1), (x2, y2) = r.points
    return x1, y1, x2, y2


def iou(a: Region, b: Region) -> float:
    """Intersection over union of two box regions; 0 when the union is empty."""
    ax1, ay1, ax2, ay2 = _require_box(a)
    bx1, by1, bx2, by2 = _require_box(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(0.0, iw) * max(0.0, ih)
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def box_area_px(r: Region, dims: ImageDims) -> float:
    """Pixel area of a box region in the given frame."""
    x1, y1, x2, y2 = _require_box(r)
    return (x2 - x1) * dims.width * (y2 - y1) * dims.height


def size_bucket(area_px: float) -> SizeBucket:
    """COCO-style area bucket: small < 32^2 <= medium < 96^2 <= large."""
    if area_px < SMALL_AREA_MAX:
        return SizeBucket.small
    if area_px < MEDIUM_AREA_MAX:
        return SizeBucket.medium
    return SizeBucket.large


def _clamp01(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def _expand_to_min_side(x1: float, y1: float, x2: float, y2: float) -> tuple[float, float, float, float]:
    # Grow degenerate sides to _MIN_SIDE around their center, shifted back into [0, 1].
    def expand(lo: float, hi: float) -> tuple[float, float]:
        if hi - lo >= _MIN_SIDE:
            return lo, hi
        c = (lo + hi) / 2.0
        lo, hi = c - _MIN_SIDE / 2.0, c + _MIN_SIDE / 2.0
        if lo < 0.0:
            hi -= lo
            lo = 0.0
        if hi > 1.0:
            lo -= hi - 1.0
            hi = 1.0
        return lo, hi

    x1, x2 = expand(x1, x2)
    y1, y2 = expand(y1, y2)
    return x1, y1, x2, y2


def perturb_box(r: Region, scale: float, seed: int) -> Region:
    """Displace each box corner by independent uniform noise proportional to box size.

    Each of the four corner coordinates moves by u * scale * side, with
    u ~ U(-1, 1) drawn from a generator seeded by ``seed``; corners are then
    reordered and clamped to [0, 1]. Near-degenerate results (area < 1e-6) are
    redrawn up to 100 times, after which the clamped box is expanded to a
    minimum side of 1e-3. Output is fully determined by (r, scale, seed).
    """
    x1, y1, x2, y2 = _require_box(r)
    if not (0.0 <= scale <= 1.0):
        raise GeometryError(f"noise scale must be within [0, 1], got {scale}")
    w = x2 - x1
    h = y2 - y1
    rng = random.Random(seed)
    nx1 = ny1 = nx2 = ny2 = 0.0
    for _ in range(_MAX_RETRIES + 1):
        u1, u2, u3, u4 = (rng.uniform(-1.0, 1.0) for _ in range(4))
        px1 = x1 + u1 * scale * w
        py1 = y1 + u2 * scale * h
        px2 = x2 + u3 * scale * w
        py2 = y2 + u4 * scale * h
        nx1, nx2 = sorted((px1, px2))
        ny1, ny2 = sorted((py1, py2))
        nx1, ny1, nx2, ny2 = _clamp01(nx1), _clamp01(ny1), _clamp01(nx2), _clamp01(ny2)
        if (nx2 - nx1) * (ny2 - ny1) >= _MIN_PERTURBED_AREA:
            return Region.box_at(nx1, ny1, nx2, ny2, source_dims=r.source_dims)
    nx1, ny1, nx2, ny2 = _expand_to_min_side(nx1, ny1, nx2, ny2)
    return Region.box_at(nx1, ny1, nx2, ny2, source_dims=r.source_dims)


def enclosing_box(r: Region) -> Region:
    """Axis-aligned bounding box of the region's point set (identity on boxes)."""
    if r.kind is RegionKind.box:
        return r
    xs = [p[0] for p in r.points]
    ys = [p[1] for p in r.points]
    return Region.box_at(min(xs), min(ys), max(xs), max(ys), source_dims=r.source_dims)
