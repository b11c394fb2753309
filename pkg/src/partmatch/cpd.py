"""Common pattern discovery between an input map and a dictionary map.

Candidate keypoint boxes are sampled at random on the input map.  Those that
cover enough of the map (maximality) are placed onto the dictionary map by a
rigid transform search, which yields the descriptor box and the appearance
score.  The final pool keeps only parts whose descriptor boxes overlap each
other (geometric consistency).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, signal

from .errors import EmptyPoolError, InvalidArgument
from .geometry import BBox, OccupancyGrid, PointSetMap, RigidTransform2, _rotation_terms, rasterize, rotate_points

ROTATION_MODES = ("manhattan-4", "free")
GC_MODES = ("pair", "strict", "off")
FREE_ROTATION_COUNT = 36
_EPS = 1e-9


@dataclass(frozen=True)
class Part:
    keypoint_bb: BBox
    descriptor_bb: BBox
    as_score: Optional[float]


@dataclass(frozen=True)
class CpdConfig:
    candidate_samples: int = 2000
    pool_size: int = 100
    t_size: float = 0.9
    grid_resolution: float = 0.1
    rotation_mode: str = "manhattan-4"
    translation_step: float = 0.1
    seed: int = 0
    gc: str = "pair"
    # placement proposals shared by all candidates of one map
    descriptor_proposals: int = 32
    # coarse grid cell = coarse_factor fine cells, used only to propose placements
    coarse_factor: int = 4
    # upper bound on the number of MC-passing candidates that get placed
    max_evaluated: int = 200

    def __post_init__(self):
        if self.candidate_samples < 1 or self.pool_size < 1:
            raise InvalidArgument("candidate_samples and pool_size must be positive")
        if self.pool_size > self.candidate_samples:
            raise InvalidArgument("pool_size must not exceed candidate_samples")
        if not 0 < self.t_size <= 1:
            raise InvalidArgument("t_size must lie in (0, 1]")
        if not (self.grid_resolution > 0 and self.translation_step > 0):
            raise InvalidArgument("grid_resolution and translation_step must be positive")
        if self.rotation_mode not in ROTATION_MODES:
            raise InvalidArgument(f"unknown rotation mode {self.rotation_mode!r}")
        if self.gc not in GC_MODES:
            raise InvalidArgument(f"unknown gc mode {self.gc!r}")
        if self.descriptor_proposals < 1 or self.coarse_factor < 1 or self.max_evaluated < 1:
            raise InvalidArgument("descriptor_proposals, coarse_factor and max_evaluated must be positive")

    def rotations(self) -> list[float]:
        if self.rotation_mode == "manhattan-4":
            return [k * 0.5 * math.pi for k in range(4)]
        return [k * 2.0 * math.pi / FREE_ROTATION_COUNT for k in range(FREE_ROTATION_COUNT)]


def sample_candidate_bbs(m: PointSetMap, n: int, seed, clip: bool = True) -> list[BBox]:
    """Random square boxes over the map extent.

    Side lengths are log-uniform in [0.3, 1.0] times the longer extent side.
    Along each axis the centre is uniform over the positions that keep the box
    inside the extent, or that make it span the extent when the box is wider.
    With ``clip`` the boxes are cut back to the extent.
    """
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    rng = np.random.default_rng(seed)
    ext = m.extent
    longest = max(ext.width, ext.height)
    if longest <= 0:
        longest = 1e-6
    u = rng.random((n, 3))
    side = longest * np.exp(math.log(0.3) + u[:, 2] * (math.log(1.0) - math.log(0.3)))
    half = 0.5 * side
    # centre range on each axis: [lo + half, hi - half] when the box fits, else [hi - half, lo + half]
    ax = np.minimum(ext.x_begin + half, ext.x_end - half)
    bx = np.maximum(ext.x_begin + half, ext.x_end - half)
    ay = np.minimum(ext.y_begin + half, ext.y_end - half)
    by = np.maximum(ext.y_begin + half, ext.y_end - half)
    cx = ax + u[:, 0] * (bx - ax)
    cy = ay + u[:, 1] * (by - ay)
    x0, x1 = cx - half, cx + half
    y0, y1 = cy - half, cy + half
    if clip:
        x0 = np.maximum(x0, ext.x_begin)
        x1 = np.minimum(x1, ext.x_end)
        y0 = np.maximum(y0, ext.y_begin)
        y1 = np.minimum(y1, ext.y_end)
    return [BBox(float(a), float(b), float(c), float(d)) for a, b, c, d in zip(x0, x1, y0, y1)]


def check_mc(m: PointSetMap, bb: BBox, t_size: float) -> bool:
    """True iff the box holds at least ``t_size`` of the map's points."""
    inside = int(np.count_nonzero(bb.contains(m.points)))
    return inside >= t_size * len(m) - _EPS


def _offset_range(half_rot: float, half_desc: float, margin: float, step: float) -> int:
    """Largest k with k*step + half_rot <= half_desc + margin, or -1 if none."""
    slack = half_desc + margin - half_rot
    if slack < -_EPS:
        return -1
    return int(math.floor(slack / step + _EPS))


def _rotated_half_extents(theta: float, hw: float, hh: float) -> tuple[float, float]:
    c, s = _rotation_terms(theta)
    return abs(c) * hw + abs(s) * hh, abs(s) * hw + abs(c) * hh


def _count_offsets(rp: np.ndarray, tx: np.ndarray, ty: np.ndarray, grid: OccupancyGrid) -> np.ndarray:
    """Inliers of already-rotated points for each translation (tx[k], ty[k])."""
    r = grid.resolution
    ix = np.floor((rp[None, :, 0] + tx[:, None]) / r).astype(np.int64) - grid.ix0
    iy = np.floor((rp[None, :, 1] + ty[:, None]) / r).astype(np.int64) - grid.iy0
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    hit = np.zeros(ix.shape, dtype=bool)
    hit[inside] = grid.occupied[ix[inside], iy[inside]]
    return hit.sum(axis=1)


def placement_search(
    points: np.ndarray,
    keypoint_bb: BBox,
    descriptor_bb: BBox,
    grid: OccupancyGrid,
    rotations: Sequence[float],
    step: float,
) -> tuple[int, RigidTransform2]:
    """Best inlier count of ``points`` moved from the keypoint box into the descriptor box.

    A transform rotates about the keypoint box centre and moves that centre to
    the descriptor box centre plus a lattice offset (i*step, j*step).  Only
    transforms that keep the rotated keypoint box inside the descriptor box
    dilated by one grid cell are searched.  Ties keep the first transform in
    (rotation, i, j) order.
    """
    kc = keypoint_bb.center
    dc = descriptor_bb.center
    hw, hh = 0.5 * keypoint_bb.width, 0.5 * keypoint_bb.height
    best = (-1, RigidTransform2.identity())
    for theta in rotations:
        rhw, rhh = _rotated_half_extents(theta, hw, hh)
        imax = _offset_range(rhw, 0.5 * descriptor_bb.width, grid.resolution, step)
        jmax = _offset_range(rhh, 0.5 * descriptor_bb.height, grid.resolution, step)
        if imax < 0 or jmax < 0:
            continue
        c, s = _rotation_terms(theta)
        base_x = c * kc.x - s * kc.y
        base_y = s * kc.x + c * kc.y
        ii, jj = np.meshgrid(np.arange(-imax, imax + 1), np.arange(-jmax, jmax + 1), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        tx = (dc.x + ii * step) - base_x
        ty = (dc.y + jj * step) - base_y
        counts = _count_offsets(rotate_points(theta, points), tx, ty, grid)
        k = int(np.argmax(counts))
        if counts[k] > best[0]:
            best = (int(counts[k]), RigidTransform2(theta, float(tx[k]), float(ty[k])))
    return best


def appearance_similarity(
    m: PointSetMap,
    keypoint_bb: BBox,
    dict_grid: OccupancyGrid,
    descriptor_bb: BBox,
    cfg: CpdConfig = CpdConfig(),
) -> float:
    """Fraction of the keypoint crop that lands on dictionary occupancy under the best placement."""
    crop = m.points[keypoint_bb.contains(m.points)]
    if len(crop) == 0:
        raise InvalidArgument("keypoint box contains no map points")
    count, _ = placement_search(crop, keypoint_bb, descriptor_bb, dict_grid, cfg.rotations(), cfg.translation_step)
    return max(count, 0) / len(crop)


@lru_cache(maxsize=64)
def _coarse_occupancy(grid: OccupancyGrid, factor: int) -> np.ndarray:
    w, h = grid.width, grid.height
    pw, ph = -(-w // factor) * factor, -(-h // factor) * factor
    occ = np.zeros((pw, ph), dtype=bool)
    occ[:w, :h] = grid.occupied
    return occ.reshape(pw // factor, factor, ph // factor, factor).any(axis=(1, 3)).astype(np.float64)


def _propose_transforms(m: PointSetMap, grid: OccupancyGrid, cfg: CpdConfig, rng) -> list[RigidTransform2]:
    """Whole-map placements onto the dictionary, best first.

    Peaks of a coarse correlation between the rotated map and the dictionary
    are refined on the fine lattice.  Missing proposals are filled with
    uniformly random placements over the dictionary.
    """
    f = cfg.coarse_factor
    cres = grid.resolution * f
    coarse = _coarse_occupancy(grid, f)
    cw, ch = coarse.shape
    peaks = []
    for ri, theta in enumerate(cfg.rotations()):
        q = rotate_points(theta, m.points)
        qmin = q.min(axis=0)
        a = np.floor((q - qmin) / cres).astype(np.int64)
        kernel = np.zeros((a[:, 0].max() + 1, a[:, 1].max() + 1))
        np.add.at(kernel, (a[:, 0], a[:, 1]), 1.0)
        kw, kh = kernel.shape
        padded = np.zeros((cw + kw - 1, ch + kh - 1))
        padded[:cw, :ch] = coarse
        score = signal.correlate(padded, kernel, mode="valid", method="fft")
        score = np.rint(score)
        local_max = ndimage.maximum_filter(score, size=3, mode="constant") == score
        us, vs = np.nonzero(local_max & (score > 0))
        for u, v in zip(us, vs):
            peaks.append((-score[u, v], ri, int(u), int(v), theta, qmin))
    peaks.sort(key=lambda p: p[:4])
    n = cfg.descriptor_proposals
    coarse_hyps = []
    for _, _, u, v, theta, qmin in peaks[:n]:
        gx = (grid.ix0 * grid.resolution) + u * cres
        gy = (grid.iy0 * grid.resolution) + v * cres
        coarse_hyps.append(RigidTransform2(theta, gx - qmin[0], gy - qmin[1]))
    bounds = grid.bounds
    rots = cfg.rotations()
    while len(coarse_hyps) < n:
        theta = rots[int(rng.integers(len(rots)))]
        q = rotate_points(theta, m.points)
        qmin = q.min(axis=0)
        gx = bounds.x_begin + rng.random() * bounds.width
        gy = bounds.y_begin + rng.random() * bounds.height
        coarse_hyps.append(RigidTransform2(theta, gx - qmin[0], gy - qmin[1]))

    step = cfg.translation_step
    reach = int(math.ceil(cres / step))
    ii, jj = np.meshgrid(np.arange(-reach, reach + 1), np.arange(-reach, reach + 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    refined = []
    for t in coarse_hyps:
        rp = rotate_points(t.rotation, m.points)
        # anchor on absolute multiples of the step so exact lattice shifts are reachable
        tx = (round(t.tx / step) + ii) * step
        ty = (round(t.ty / step) + jj) * step
        counts = _count_offsets(rp, tx, ty, grid)
        k = int(np.argmax(counts))
        refined.append((-int(counts[k]), len(refined), RigidTransform2(t.rotation, float(tx[k]), float(ty[k]))))
    refined.sort(key=lambda e: e[:2])
    # distinct coarse peaks can refine to the same transform
    return list(dict.fromkeys(t for _, _, t in refined))


def part_sort_key(p: Part):
    score = -1.0 if p.as_score is None else p.as_score
    return (-score, -p.descriptor_bb.area, p.descriptor_bb.as_tuple(), p.keypoint_bb.as_tuple())


def _positive_overlap(a: BBox, b: BBox) -> bool:
    return min(a.x_end, b.x_end) > max(a.x_begin, b.x_begin) and min(a.y_end, b.y_end) > max(a.y_begin, b.y_begin)


def apply_gc(parts: Sequence[Part], limit: int) -> list[Part]:
    """Greedy mutual-overlap filter over parts already sorted best first."""
    kept: list[Part] = []
    for p in parts:
        if all(_positive_overlap(p.descriptor_bb, q.descriptor_bb) for q in kept):
            kept.append(p)
            if len(kept) == limit:
                break
    return kept


def placed_box(kb: BBox, t: RigidTransform2) -> BBox:
    """Axis-aligned bounds of a keypoint box moved by ``t``."""
    c, s = _rotation_terms(t.rotation)
    kc = kb.center
    rhw, rhh = _rotated_half_extents(t.rotation, 0.5 * kb.width, 0.5 * kb.height)
    return BBox.from_center(c * kc.x - s * kc.y + t.tx, s * kc.x + c * kc.y + t.ty, 2 * rhw, 2 * rhh)


def check_gc_pair(kb: BBox, db: BBox, t: RigidTransform2) -> bool:
    """The keypoint box, moved onto the dictionary by ``t``, overlaps its descriptor box."""
    return _positive_overlap(placed_box(kb, t), db)


def _inlier_masks(points: np.ndarray, transforms: Sequence[RigidTransform2], grid: OccupancyGrid) -> np.ndarray:
    """(len(transforms), n) booleans: point lands on an occupied cell."""
    out = np.zeros((len(transforms), len(points)), dtype=bool)
    for k, t in enumerate(transforms):
        out[k] = grid.lookup(rotate_points(t.rotation, points) + np.array([t.tx, t.ty]))
    return out


def _fits(kb: BBox, t: RigidTransform2, dict_extent: BBox, margin: float, step: float) -> Optional[BBox]:
    """Descriptor box for ``kb`` under ``t`` if it is addressable and the rotated crop fits it."""
    rhw, rhh = _rotated_half_extents(t.rotation, 0.5 * kb.width, 0.5 * kb.height)
    if rhw > 0.5 * kb.width + margin + _EPS or rhh > 0.5 * kb.height + margin + _EPS:
        return None
    c, s = _rotation_terms(t.rotation)
    kc = kb.center
    x0 = c * kc.x - s * kc.y + t.tx - 0.5 * kb.width
    y0 = s * kc.x + c * kc.y + t.ty - 0.5 * kb.height
    # an origin up to one cell outside the extent is snapped back; the search reaches that far
    ext = dict_extent
    if not (ext.x_begin - margin - _EPS <= x0 <= ext.x_end + margin + _EPS):
        return None
    if not (ext.y_begin - margin - _EPS <= y0 <= ext.y_end + margin + _EPS):
        return None
    step = min(step, margin)
    x0 = _snap_into(x0, ext.x_begin, ext.x_end, step)
    y0 = _snap_into(y0, ext.y_begin, ext.y_end, step)
    if x0 is None or y0 is None:
        return None
    return BBox(x0, x0 + kb.width, y0, y0 + kb.height)


def _snap_into(v: float, lo: float, hi: float, step: float) -> Optional[float]:
    """Move ``v`` into [lo, hi] by whole steps, so the searched offsets still include the proposal."""
    if v < lo:
        v += math.ceil((lo - v) / step - _EPS) * step
    elif v > hi:
        v -= math.ceil((v - hi) / step - _EPS) * step
    return v if lo - _EPS <= v <= hi + _EPS else None


def discover_parts(m: PointSetMap, dictionary: PointSetMap, cfg: CpdConfig = CpdConfig(), dict_grid: Optional[OccupancyGrid] = None) -> list[Part]:
    """Pool of at most ``cfg.pool_size`` parts, best appearance score first.

    Every proposed placement of the map onto the dictionary contributes one
    part: the maximal keypoint box whose crop it explains best, scored by the
    exact transform search inside the resulting descriptor box.
    """
    if len(m) == 0 or len(dictionary) == 0:
        raise InvalidArgument("both maps must be nonempty")
    grid = dict_grid if dict_grid is not None else dictionary_grid(dictionary, cfg.grid_resolution)
    rng = np.random.default_rng(cfg.seed)
    boxes = sample_candidate_bbs(m, cfg.candidate_samples, rng)
    arr = np.array([b.as_tuple() for b in boxes])
    pts = m.points
    inside = (
        (pts[None, :, 0] >= arr[:, 0, None])
        & (pts[None, :, 0] <= arr[:, 1, None])
        & (pts[None, :, 1] >= arr[:, 2, None])
        & (pts[None, :, 1] <= arr[:, 3, None])
    )
    counts = inside.sum(axis=1)
    passing = np.flatnonzero(counts >= cfg.t_size * len(m) - _EPS)
    if len(passing) == 0:
        raise EmptyPoolError(f"no candidate box of map {m.id!r} passes the maximality check")

    # identical boxes give identical parts; evaluate each distinct box once
    seen = set()
    chosen = []
    for k in passing:
        key = boxes[k].as_tuple()
        if key not in seen:
            seen.add(key)
            chosen.append(int(k))
        if len(chosen) == cfg.max_evaluated:
            break
    cand = [boxes[k] for k in chosen]
    cand_inside = inside[chosen]

    proposals = _propose_transforms(m, grid, cfg, rng)
    hits = _inlier_masks(pts, proposals, grid)
    frac = (cand_inside.astype(np.int64) @ hits.T.astype(np.int64)) / counts[chosen][:, None]
    dict_extent = dictionary.extent
    rots = cfg.rotations()
    parts = []
    seen_parts = set()
    for p, t in enumerate(proposals):
        best = None
        for c in np.argsort(-frac[:, p], kind="stable"):
            db = _fits(cand[c], t, dict_extent, grid.resolution, cfg.translation_step)
            if db is not None:
                best = (cand[c], db, cand_inside[c])
                break
        if best is None:
            continue
        kb, db, mask = best
        if (kb, db) in seen_parts:
            continue
        seen_parts.add((kb, db))
        count, t_best = placement_search(pts[mask], kb, db, grid, rots, cfg.translation_step)
        if cfg.gc == "pair" and not check_gc_pair(kb, db, t_best):
            continue
        parts.append(Part(kb, db, max(count, 0) / int(mask.sum())))
    if not parts:
        raise EmptyPoolError(f"no placement of map {m.id!r} fits the dictionary extent")
    parts.sort(key=part_sort_key)
    if cfg.gc == "strict":
        return apply_gc(parts, cfg.pool_size)
    return parts[: cfg.pool_size]


@lru_cache(maxsize=16)
def dictionary_grid(dictionary: PointSetMap, resolution: float) -> OccupancyGrid:
    return rasterize(dictionary, resolution)


def with_pool_size(cfg: CpdConfig, pool_size: int) -> CpdConfig:
    return replace(cfg, pool_size=pool_size, candidate_samples=max(cfg.candidate_samples, pool_size))
