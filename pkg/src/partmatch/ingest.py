"""Map and trajectory files, Manhattan alignment and travel-window submaps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EmptySubmapError, InvalidArgument, ParseError
from .geometry import Point2, PointSetMap, rotate_points

HEADER_KEYS = ("id", "source")


@dataclass(frozen=True)
class Annotation:
    """World-frame pose (point-cloud centroid) and travel distance of a map."""

    pose: Point2
    travel: float


@dataclass
class MapCollection:
    dictionary: PointSetMap
    locals: list[PointSetMap]
    globals: list[PointSetMap]
    annotations: dict[str, Annotation] = field(default_factory=dict)

    def __post_init__(self):
        ids = [self.dictionary.id] + [m.id for m in self.locals] + [m.id for m in self.globals]
        if len(set(ids)) != len(ids):
            raise InvalidArgument("map ids in a collection must be unique")
        missing = set(self.annotations) - set(ids)
        if missing:
            raise InvalidArgument(f"annotations for unknown maps: {sorted(missing)[:5]}")

    def by_id(self) -> dict[str, PointSetMap]:
        out = {m.id: m for m in self.globals}
        out.update({m.id: m for m in self.locals})
        out[self.dictionary.id] = self.dictionary
        return out


def _read_table(path: Path, ncols: int):
    header: dict[str, str] = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if sep and key.strip() in HEADER_KEYS:
                    header[key.strip()] = value.strip()
                continue
            fields = line.split()
            if len(fields) != ncols:
                raise ParseError(path, lineno, f"expected {ncols} numeric fields, got {len(fields)}")
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric field in {line!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(path, lineno, "non-finite coordinate")
            rows.append(vals)
    return header, rows


def load_map(path) -> PointSetMap:
    """Read a map text file; the id comes from the header or else the file stem."""
    path = Path(path)
    header, rows = _read_table(path, 2)
    if not rows:
        raise InvalidArgument(f"{path}: no points")
    meta = {"source": header["source"]} if "source" in header else {}
    return PointSetMap(header.get("id") or path.stem, np.array(rows), meta)


def save_map(m: PointSetMap, path) -> None:
    lines = [f"# id: {m.id}"]
    if "source" in m.meta:
        lines.append(f"# source: {m.meta['source']}")
    lines.extend(f"{x:.17g} {y:.17g}" for x, y in m.points)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trajectory(path) -> tuple[str, np.ndarray, np.ndarray]:
    """Read ``x y travel`` lines; returns (id, points, travel)."""
    path = Path(path)
    header, rows = _read_table(path, 3)
    if not rows:
        raise InvalidArgument(f"{path}: no points")
    arr = np.array(rows)
    return header.get("id") or path.stem, arr[:, :2], arr[:, 2]


def save_trajectory(id: str, points, travel, path) -> None:
    lines = [f"# id: {id}"]
    lines.extend(f"{x:.17g} {y:.17g} {t:.17g}" for (x, y), t in zip(np.asarray(points), np.asarray(travel)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_annotations(annotations: dict[str, Annotation], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["map_id", "pose_x", "pose_y", "travel"])
        for mid in sorted(annotations):
            a = annotations[mid]
            w.writerow([mid, repr(a.pose.x), repr(a.pose.y), repr(a.travel)])


def load_annotations(path) -> dict[str, Annotation]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["map_id"]] = Annotation(Point2(float(row["pose_x"]), float(row["pose_y"])), float(row["travel"]))
    return out


def projection_entropy(points: np.ndarray, theta: float, bin_size: float = 0.1) -> float:
    """Sum of the Shannon entropies of the x and y projection histograms after rotating by theta."""
    return float(_entropies(points, np.array([theta]), bin_size)[0])


def _entropies(points: np.ndarray, thetas: np.ndarray, bin_size: float) -> np.ndarray:
    c = np.cos(thetas)[:, None]
    s = np.sin(thetas)[:, None]
    x, y = points[None, :, 0], points[None, :, 1]
    out = np.zeros(len(thetas))
    n = points.shape[0]
    for proj in (c * x - s * y, s * x + c * y):
        bins = np.floor(proj / bin_size).astype(np.int64)
        bins -= bins.min(axis=1, keepdims=True)
        width = int(bins.max()) + 1
        flat = bins + (np.arange(len(thetas)) * width)[:, None]
        counts = np.bincount(flat.ravel(), minlength=len(thetas) * width).reshape(len(thetas), width)
        p = counts / n
        with np.errstate(divide="ignore", invalid="ignore"):
            out -= np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
    return out


def align_manhattan(m: PointSetMap, angle_step: float = math.pi / 180, bin_size: float = 0.1) -> tuple[PointSetMap, float]:
    """Rotate a map so its dominant walls run along the axes.

    Angles in [0, pi/2) are scanned at ``angle_step``; the one whose rotated
    point set has the lowest projection-histogram entropy is applied.
    """
    if not 0 < angle_step <= math.pi / 180 + 1e-15:
        raise InvalidArgument("angle_step must lie in (0, pi/180]")
    n = int(math.ceil(0.5 * math.pi / angle_step - 1e-9))
    thetas = np.arange(n) * angle_step
    ent = _entropies(m.points, thetas, bin_size)
    best = float(thetas[int(np.argmin(ent))])
    return m.with_points(rotate_points(best, m.points)), best


def segment_submaps(
    points,
    travel,
    window: float,
    stride: float,
    prefix: str = "m",
    start: Optional[float] = None,
) -> list[tuple[PointSetMap, Annotation]]:
    """Split a travel-stamped point stream into sliding travel windows.

    Window k holds the points with travel in [s_k, s_k + window), where
    s_k = start + k*stride and only windows ending within the stream are kept.
    The last window also takes any points after its end.
    Each submap is annotated with its centroid and its window-centre travel.
    """
    if not (window > 0 and stride > 0):
        raise InvalidArgument("window and stride must be positive")
    pts = np.asarray(points, dtype=np.float64)
    trav = np.asarray(travel, dtype=np.float64)
    if len(pts) != len(trav) or len(pts) == 0:
        raise InvalidArgument("points and travel must be nonempty and of equal length")
    t0 = float(trav.min()) if start is None else float(start)
    t1 = float(trav.max())
    count = int(math.floor((t1 - t0 - window) / stride + 1e-9)) + 1
    if count < 1:
        count = 1
    order = np.argsort(trav, kind="stable")
    sorted_trav = trav[order]
    out = []
    for k in range(count):
        s = t0 + k * stride
        lo = np.searchsorted(sorted_trav, s, side="left")
        hi = np.searchsorted(sorted_trav, s + window, side="left")
        if k == count - 1:
            # the last window absorbs the tail shorter than a stride
            hi = len(sorted_trav)
        idx = np.sort(order[lo:hi])
        if len(idx) == 0:
            raise EmptySubmapError(f"window [{s:.3f}, {s + window:.3f}) holds no points")
        sub = PointSetMap(f"{prefix}{k:04d}", pts[idx])
        out.append((sub, Annotation(sub.centroid, s + 0.5 * window)))
    return out


def load_collection(root) -> MapCollection:
    """Read a dataset directory written by the synth command."""
    root = Path(root)
    dictionary = load_map(root / "dictionary.txt")
    locals_ = [load_map(p) for p in sorted((root / "locals").glob("*.txt"))]
    globals_ = [load_map(p) for p in sorted((root / "globals").glob("*.txt"))]
    ann_path = root / "annotations.csv"
    ann = load_annotations(ann_path) if ann_path.exists() else {}
    return MapCollection(dictionary, locals_, globals_, ann)


def save_collection(coll: MapCollection, root) -> None:
    root = Path(root)
    (root / "locals").mkdir(parents=True, exist_ok=True)
    (root / "globals").mkdir(parents=True, exist_ok=True)
    save_map(coll.dictionary, root / "dictionary.txt")
    for m in coll.locals:
        save_map(m, root / "locals" / f"{m.id}.txt")
    for m in coll.globals:
        save_map(m, root / "globals" / f"{m.id}.txt")
    save_annotations(coll.annotations, root / "annotations.csv")


def iter_maps(paths: Iterable) -> list[PointSetMap]:
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(load_map(q) for q in sorted(p.glob("*.txt")))
        else:
            out.append(load_map(p))
    return out
