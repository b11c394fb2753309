"""Core 2D types: points, rigid transforms, boxes and binary occupancy grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidArgument

DEFAULT_RESOLUTION = 0.1


class Point2(NamedTuple):
    x: float
    y: float


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidArgument(f"expected an (n, 2) array of points, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class BBox:
    x_begin: float
    x_end: float
    y_begin: float
    y_end: float

    def __post_init__(self):
        vals = (self.x_begin, self.x_end, self.y_begin, self.y_end)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidArgument(f"non-finite box coordinates {vals}")
        if self.x_begin > self.x_end or self.y_begin > self.y_end:
            raise InvalidArgument(f"inverted box {vals}")

    @property
    def width(self) -> float:
        return self.x_end - self.x_begin

    @property
    def height(self) -> float:
        return self.y_end - self.y_begin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point2:
        return Point2(0.5 * (self.x_begin + self.x_end), 0.5 * (self.y_begin + self.y_end))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_begin, self.x_end, self.y_begin, self.y_end)

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the closed box."""
        pts = _as_points(points)
        return (
            (pts[:, 0] >= self.x_begin)
            & (pts[:, 0] <= self.x_end)
            & (pts[:, 1] >= self.y_begin)
            & (pts[:, 1] <= self.y_end)
        )

    def dilate(self, margin: float) -> "BBox":
        return BBox(self.x_begin - margin, self.x_end + margin, self.y_begin - margin, self.y_end + margin)

    def intersects(self, other: "BBox") -> bool:
        return bbox_overlap(self, other) is not None

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> "BBox":
        return cls(cx - 0.5 * width, cx + 0.5 * width, cy - 0.5 * height, cy + 0.5 * height)


def bbox_overlap(a: BBox, b: BBox) -> Optional[BBox]:
    """Intersection rectangle of two boxes, or None when they are disjoint.

    Boxes that only touch along an edge yield a zero-area box.
    """
    x0 = max(a.x_begin, b.x_begin)
    x1 = min(a.x_end, b.x_end)
    y0 = max(a.y_begin, b.y_begin)
    y1 = min(a.y_end, b.y_end)
    if x0 > x1 or y0 > y1:
        return None
    return BBox(x0, x1, y0, y1)


def overlap_area(a: BBox, b: BBox) -> float:
    ov = bbox_overlap(a, b)
    return 0.0 if ov is None else ov.area


@dataclass(frozen=True, eq=False)
class PointSetMap:
    """A 2D point cloud in meters with an identity."""

    id: str
    points: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.id:
            raise InvalidArgument("map id must be nonempty")
        pts = _as_points(self.points)
        if len(pts) == 0:
            raise InvalidArgument(f"map {self.id!r} has no points")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument(f"map {self.id!r} has non-finite coordinates")
        pts = np.array(pts, dtype=np.float64, copy=True)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def extent(self) -> BBox:
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return BBox(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))

    @property
    def centroid(self) -> Point2:
        c = self.points.mean(axis=0)
        return Point2(float(c[0]), float(c[1]))

    def with_points(self, points, id: Optional[str] = None) -> "PointSetMap":
        return PointSetMap(id or self.id, points, dict(self.meta))


def _rotation_terms(theta: float) -> tuple[float, float]:
    # Exact values on multiples of pi/2 so Manhattan rotations move points without rounding.
    quarter = theta / (0.5 * math.pi)
    k = round(quarter)
    if abs(quarter - k) < 1e-12:
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[k % 4]
    return math.cos(theta), math.sin(theta)


@dataclass(frozen=True)
class RigidTransform2:
    """Rotation about the origin followed by a translation."""

    rotation: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @property
    def translation(self) -> tuple[float, float]:
        return (self.tx, self.ty)

    def inverse(self) -> "RigidTransform2":
        c, s = _rotation_terms(self.rotation)
        # R^T applied to -t
        return RigidTransform2(-self.rotation, -(c * self.tx + s * self.ty), -(-s * self.tx + c * self.ty))

    def compose(self, other: "RigidTransform2") -> "RigidTransform2":
        """self after other."""
        c, s = _rotation_terms(self.rotation)
        return RigidTransform2(
            self.rotation + other.rotation,
            c * other.tx - s * other.ty + self.tx,
            s * other.tx + c * other.ty + self.ty,
        )

    @classmethod
    def identity(cls) -> "RigidTransform2":
        return cls(0.0, 0.0, 0.0)


def apply_transform(t: RigidTransform2, p: Point2) -> Point2:
    c, s = _rotation_terms(t.rotation)
    x, y = p
    return Point2((c * x - s * y) + t.tx, (s * x + c * y) + t.ty)


def rotate_points(theta: float, points) -> np.ndarray:
    pts = _as_points(points)
    c, s = _rotation_terms(theta)
    out = np.empty_like(pts)
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1]
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1]
    return out


def transform_points(t: RigidTransform2, points) -> np.ndarray:
    out = rotate_points(t.rotation, points)
    out[:, 0] += t.tx
    out[:, 1] += t.ty
    return out


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Binary grid; cell (i, j) covers [(ix0+i)r, (ix0+i+1)r) x [(iy0+j)r, (iy0+j+1)r)."""

    ix0: int
    iy0: int
    resolution: float
    occupied: np.ndarray  # shape (width, height), bool

    @property
    def width(self) -> int:
        return self.occupied.shape[0]

    @property
    def height(self) -> int:
        return self.occupied.shape[1]

    @property
    def origin(self) -> Point2:
        return Point2(self.ix0 * self.resolution, self.iy0 * self.resolution)

    @property
    def bounds(self) -> BBox:
        r = self.resolution
        return BBox(self.ix0 * r, (self.ix0 + self.width) * r, self.iy0 * r, (self.iy0 + self.height) * r)

    @property
    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.occupied))

    def cell_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Integer (i, j) grid indices; may fall outside the grid."""
        pts = _as_points(points)
        ix = np.floor(pts[:, 0] / self.resolution).astype(np.int64) - self.ix0
        iy = np.floor(pts[:, 1] / self.resolution).astype(np.int64) - self.iy0
        return ix, iy

    def lookup(self, points) -> np.ndarray:
        """Occupancy of the cell holding each point; False outside the grid."""
        ix, iy = self.cell_index(points)
        inside = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        hit = np.zeros(len(ix), dtype=bool)
        hit[inside] = self.occupied[ix[inside], iy[inside]]
        return hit


def rasterize(m: PointSetMap, resolution: float = DEFAULT_RESOLUTION) -> OccupancyGrid:
    """Binary occupancy of a map, padded by one empty cell on each side."""
    if not resolution > 0:
        raise InvalidArgument(f"resolution must be positive, got {resolution}")
    qx = np.floor(m.points[:, 0] / resolution).astype(np.int64)
    qy = np.floor(m.points[:, 1] / resolution).astype(np.int64)
    ix0 = int(qx.min()) - 1
    iy0 = int(qy.min()) - 1
    w = int(qx.max()) - ix0 + 2
    h = int(qy.max()) - iy0 + 2
    occ = np.zeros((w, h), dtype=bool)
    occ[qx - ix0, qy - iy0] = True
    occ.setflags(write=False)
    return OccupancyGrid(ix0, iy0, float(resolution), occ)


def inlier_count(points, t: RigidTransform2, grid: OccupancyGrid) -> int:
    """Number of points whose transformed position lands in an occupied cell."""
    return int(np.count_nonzero(grid.lookup(transform_points(t, points))))
