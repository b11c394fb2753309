"""Synthetic indoor worlds, laser-scan trajectories and benchmark datasets.

A world is a set of square rooms with door gaps, furnished from a small
library of layouts.  A robot drives a closed loop through the rooms several
times, scanning with a 2D laser; the travel-stamped hits are cut into
submaps.  The dictionary map is a different building furnished from the same
layout library, every layout repeated in several rooms, so parts of the input
maps have several equally good counterparts in it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import find_relevant_pairs
from .geometry import Point2, PointSetMap
from .ingest import Annotation, MapCollection, segment_submaps

SIDES = ("W", "E", "S", "N")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 1
    room_size: float = 8.0
    door_width: float = 1.6
    layouts: int = 8
    ring: tuple[int, int] = (5, 4)
    dictionary_grid: tuple[int, int] = (8, 6)
    laps: int = 2
    scan_spacing: float = 0.25
    rays: int = 120
    max_range: float = 4.0
    noise: float = 0.02
    voxel: float = 0.1
    window: float = 4.0
    global_stride: float = 0.5
    local_stride: float = 2.0
    frame_jitter: float = 5.0
    pose_radius: float = 5.0
    min_travel_gap: float = 30.0
    dictionary_spacing: float = 0.05
    # furnish the dictionary from the world's layouts, or from a fresh set
    shared_layouts: bool = True
    # open every dictionary room on all four sides so repeated layouts look alike
    dictionary_open: bool = True


@dataclass
class Dataset:
    collection: MapCollection
    pairs: list[tuple[str, str]]
    config: SynthConfig = field(default_factory=SynthConfig)


def make_layouts(n: int, room: float, rng) -> list[np.ndarray]:
    """Furniture rectangles (x0, y0, x1, y1) in room coordinates, kept off the door axes."""
    layouts = []
    clear = 1.2
    for _ in range(n):
        rects = []
        for quadrant in range(4):
            if rng.random() < 0.25:
                continue
            qx, qy = quadrant % 2, quadrant // 2
            lo_x = 0.4 if qx == 0 else room / 2 + clear
            hi_x = room / 2 - clear if qx == 0 else room - 0.4
            lo_y = 0.4 if qy == 0 else room / 2 + clear
            hi_y = room / 2 - clear if qy == 0 else room - 0.4
            w = rng.uniform(0.4, min(1.8, hi_x - lo_x))
            h = rng.uniform(0.4, min(1.8, hi_y - lo_y))
            x0 = rng.uniform(lo_x, hi_x - w)
            y0 = rng.uniform(lo_y, hi_y - h)
            rects.append((x0, y0, x0 + w, y0 + h))
        # a stub wall from one room side into a quadrant
        side = int(rng.integers(4))
        pos = rng.uniform(0.8, room / 2 - clear - 0.2)
        if rng.random() < 0.5:
            pos = room - pos
        length = rng.uniform(1.0, room / 2 - clear - 0.2)
        if side == 0:
            rects.append((0.0, pos, length, pos))
        elif side == 1:
            rects.append((room - length, pos, room, pos))
        elif side == 2:
            rects.append((pos, 0.0, pos, length))
        else:
            rects.append((pos, room - length, pos, room))
        layouts.append(np.array(rects))
    return layouts


def _rect_segments(r) -> list[tuple[float, float, float, float]]:
    x0, y0, x1, y1 = r
    if x0 == x1 or y0 == y1:
        return [(x0, y0, x1, y1)]
    return [(x0, y0, x1, y0), (x1, y0, x1, y1), (x1, y1, x0, y1), (x0, y1, x0, y0)]


def room_segments(origin, room: float, doors: set, door_width: float, layout: np.ndarray) -> list:
    ox, oy = origin
    segs = []
    half_gap = door_width / 2
    mid = room / 2
    sides = {
        "S": ((0, 0), (room, 0)),
        "N": ((0, room), (room, room)),
        "W": ((0, 0), (0, room)),
        "E": ((room, 0), (room, room)),
    }
    for name, ((ax, ay), (bx, by)) in sides.items():
        if name in doors:
            if ay == by:
                segs += [(ax, ay, mid - half_gap, ay), (mid + half_gap, ay, bx, by)]
            else:
                segs += [(ax, ay, ax, mid - half_gap), (ax, mid + half_gap, bx, by)]
        else:
            segs.append((ax, ay, bx, by))
    for r in layout:
        segs += _rect_segments(r)
    return [(x0 + ox, y0 + oy, x1 + ox, y1 + oy) for x0, y0, x1, y1 in segs]


def ring_cells(nx: int, ny: int) -> list[tuple[int, int]]:
    """Outer ring of an nx-by-ny cell grid, counter-clockwise from (0, 0)."""
    cells = [(i, 0) for i in range(nx)]
    cells += [(nx - 1, j) for j in range(1, ny)]
    cells += [(i, ny - 1) for i in range(nx - 2, -1, -1)]
    cells += [(0, j) for j in range(ny - 2, 0, -1)]
    return cells


def _side_towards(a, b) -> str:
    dx, dy = b[0] - a[0], b[1] - a[1]
    return {(1, 0): "E", (-1, 0): "W", (0, 1): "N", (0, -1): "S"}[(dx, dy)]


def build_world(cfg: SynthConfig, layouts, rng):
    """Wall segments of the loop building and the loop waypoints (room centres)."""
    cells = ring_cells(*cfg.ring)
    segs = []
    n = len(cells)
    for k, c in enumerate(cells):
        doors = {_side_towards(c, cells[(k - 1) % n]), _side_towards(c, cells[(k + 1) % n])}
        layout = layouts[int(rng.integers(len(layouts)))]
        segs += room_segments((c[0] * cfg.room_size, c[1] * cfg.room_size), cfg.room_size, doors, cfg.door_width, layout)
    waypoints = [((c[0] + 0.5) * cfg.room_size, (c[1] + 0.5) * cfg.room_size) for c in cells]
    return np.array(segs), waypoints


def build_dictionary_walls(cfg: SynthConfig, layouts, rng) -> np.ndarray:
    nx, ny = cfg.dictionary_grid
    # every layout repeats equally often, up to one
    order = []
    while len(order) < nx * ny:
        order.extend(int(i) for i in rng.permutation(len(layouts)))
    segs = []
    k = 0
    for i in range(nx):
        for j in range(ny):
            doors = set(SIDES) if cfg.dictionary_open else set()
            if i > 0:
                doors.add("W")
            if i < nx - 1:
                doors.add("E")
            if j > 0:
                doors.add("S")
            if j < ny - 1:
                doors.add("N")
            segs += room_segments((i * cfg.room_size, j * cfg.room_size), cfg.room_size, doors, cfg.door_width, layouts[order[k]])
            k += 1
    return np.array(segs)


def sample_walls(segs: np.ndarray, spacing: float, noise: float, rng) -> np.ndarray:
    pts = []
    for x0, y0, x1, y1 in segs:
        length = math.hypot(x1 - x0, y1 - y0)
        n = max(int(length / spacing), 1)
        t = (np.arange(n) + 0.5) / n
        pts.append(np.stack([x0 + t * (x1 - x0), y0 + t * (y1 - y0)], axis=1))
    out = np.concatenate(pts)
    return out + rng.normal(0.0, noise, out.shape)


def loop_path(waypoints, laps: int, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Poses every ``spacing`` meters along the closed waypoint loop, with travel."""
    wp = np.array(waypoints + [waypoints[0]], dtype=np.float64)
    seg_len = np.hypot(*(wp[1:] - wp[:-1]).T)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    lap = cum[-1]
    travel = np.arange(0.0, laps * lap, spacing)
    s = travel % lap
    k = np.minimum(np.searchsorted(cum, s, side="right") - 1, len(seg_len) - 1)
    frac = (s - cum[k]) / seg_len[k]
    poses = wp[k] + frac[:, None] * (wp[k + 1] - wp[k])
    return poses, travel


def cast_rays(pose, segs: np.ndarray, rays: int, max_range: float, offset: float) -> np.ndarray:
    """Nearest wall hit per ray, or nothing beyond max_range."""
    ang = offset + np.arange(rays) * (2 * math.pi / rays)
    d = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    p = np.asarray(pose)
    a = segs[:, :2]
    e = segs[:, 2:] - a
    # solve p + t d = a + u e
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    w = a[None, :, :] - p[None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[..., 0] * e[None, :, 1] - w[..., 1] * e[None, :, 0]) / denom
        u = (w[..., 0] * d[:, None, 1] - w[..., 1] * d[:, None, 0]) / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-6) & (u >= 0) & (u <= 1)
    t = np.where(valid, t, np.inf)
    best = t.min(axis=1)
    hit = best <= max_range
    return p + best[hit, None] * d[hit]


def scan_loop(segs, waypoints, cfg: SynthConfig, rng):
    poses, travel = loop_path(waypoints, cfg.laps, cfg.scan_spacing)
    pts, trav = [], []
    for pose, tr in zip(poses, travel):
        hits = cast_rays(pose, segs, cfg.rays, cfg.max_range, rng.uniform(0, 2 * math.pi / cfg.rays))
        hits = hits + rng.normal(0.0, cfg.noise, hits.shape)
        pts.append(hits)
        trav.append(np.full(len(hits), tr))
    return np.concatenate(pts), np.concatenate(trav), poses, travel


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """First point per voxel, in input order."""
    keys = np.floor(points / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def _reframe(submaps, prefix, cfg: SynthConfig, rng):
    maps, ann = [], {}
    for k, (m, a) in enumerate(submaps):
        pts = voxel_downsample(m.points, cfg.voxel)
        shift = m.points.min(axis=0) + rng.uniform(-cfg.frame_jitter, cfg.frame_jitter, 2)
        mid = f"{prefix}{k:04d}"
        world = PointSetMap(mid, pts)
        maps.append(PointSetMap(mid, pts - shift, {"source": "synth"}))
        ann[mid] = Annotation(world.centroid, a.travel)
    return maps, ann


def generate(cfg: SynthConfig = SynthConfig()) -> Dataset:
    """Build dictionary, local and global submaps, annotations and relevant pairs."""
    rng = np.random.default_rng(cfg.seed)
    layouts = make_layouts(cfg.layouts, cfg.room_size, rng)
    segs, waypoints = build_world(cfg, layouts, rng)
    dict_layouts = layouts if cfg.shared_layouts else make_layouts(cfg.layouts, cfg.room_size, rng)
    dict_segs = build_dictionary_walls(cfg, dict_layouts, rng)
    dictionary = PointSetMap("dictionary", sample_walls(dict_segs, cfg.dictionary_spacing, cfg.noise, rng), {"source": "synth"})

    pts, trav, _, _ = scan_loop(segs, waypoints, cfg, rng)
    glob = segment_submaps(pts, trav, cfg.window, cfg.global_stride, prefix="g")
    lap = trav.max() / cfg.laps
    # local maps come from the last lap only, offset from the global windows
    loc = segment_submaps(pts, trav, cfg.window, cfg.local_stride, prefix="q", start=(cfg.laps - 1) * lap + 0.25 * cfg.global_stride)
    globals_, ann = _reframe(glob, "g", cfg, rng)
    locals_, ann_l = _reframe(loc, "q", cfg, rng)
    ann.update(ann_l)
    coll = MapCollection(dictionary, locals_, globals_, ann)
    pairs = find_relevant_pairs([m.id for m in locals_], [m.id for m in globals_], ann, cfg.pose_radius, cfg.min_travel_gap)
    return Dataset(coll, pairs, cfg)


def world_pose(ann: dict[str, Annotation], mid: str) -> Point2:
    return ann[mid].pose
