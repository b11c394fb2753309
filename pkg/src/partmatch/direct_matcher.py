"""Direct map matching: 1-point RANSAC over rigid transforms scored by grid inliers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .geometry import OccupancyGrid, PointSetMap, RigidTransform2, rasterize, rotate_points

ROTATION_MODES = ("manhattan-4", "free")
_CHUNK = 128


@dataclass(frozen=True)
class DmmConfig:
    hypothesis_count: int = 500
    rotation_mode: str = "manhattan-4"
    seed: int = 0
    grid_resolution: float = 0.1

    def __post_init__(self):
        if self.hypothesis_count < 1:
            raise InvalidArgument("hypothesis_count must be >= 1")
        if not self.grid_resolution > 0:
            raise InvalidArgument("grid_resolution must be positive")
        if self.rotation_mode not in ROTATION_MODES:
            raise InvalidArgument(f"unknown rotation mode {self.rotation_mode!r}")


@dataclass(frozen=True)
class DmmResult:
    score: int
    best_transform: RigidTransform2
    normalized_score: float


@lru_cache(maxsize=4096)
def target_grid(target: PointSetMap, resolution: float) -> OccupancyGrid:
    """Rasterized target, cached per (map object, resolution); grids are read-only."""
    return rasterize(target, resolution)


def _hypothesis_arrays(query: PointSetMap, target: PointSetMap, cfg: DmmConfig):
    n_rand = cfg.hypothesis_count - 1
    u = np.random.default_rng(cfg.seed).random((n_rand, 3))
    qi = np.minimum((u[:, 0] * len(query)).astype(np.int64), len(query) - 1)
    ti = np.minimum((u[:, 1] * len(target)).astype(np.int64), len(target) - 1)
    if cfg.rotation_mode == "manhattan-4":
        quarter = np.minimum((u[:, 2] * 4).astype(np.int64), 3)
        thetas = quarter * (0.5 * math.pi)
        rx = np.empty(n_rand)
        ry = np.empty(n_rand)
        for k in range(4):
            sel = quarter == k
            rp = rotate_points(k * 0.5 * math.pi, query.points[qi[sel]]) if sel.any() else np.empty((0, 2))
            rx[sel] = rp[:, 0]
            ry[sel] = rp[:, 1]
    else:
        thetas = u[:, 2] * (2.0 * math.pi)
        c, s = np.cos(thetas), np.sin(thetas)
        qx, qy = query.points[qi, 0], query.points[qi, 1]
        rx = c * qx - s * qy
        ry = s * qx + c * qy
    tx = target.points[ti, 0] - rx
    ty = target.points[ti, 1] - ry
    # hypothesis 0 is the identity
    return (
        np.concatenate([[0.0], thetas]),
        np.concatenate([[0.0], tx]),
        np.concatenate([[0.0], ty]),
    )


def sample_hypotheses(query: PointSetMap, target: PointSetMap, cfg: DmmConfig) -> list[RigidTransform2]:
    """Identity first, then transforms that make a random query point land on a random target point.

    Draws are taken row by row from one stream, so a larger hypothesis_count only
    appends hypotheses to the list produced by a smaller one.
    """
    th, tx, ty = _hypothesis_arrays(query, target, cfg)
    return [RigidTransform2(float(a), float(b), float(c)) for a, b, c in zip(th, tx, ty)]


def _score_hypotheses(points: np.ndarray, thetas, txs, tys, grid: OccupancyGrid) -> np.ndarray:
    r = grid.resolution
    w, h = grid.width, grid.height
    occ = grid.occupied
    scores = np.zeros(len(thetas), dtype=np.int64)
    for theta in np.unique(thetas):
        idx_all = np.flatnonzero(thetas == theta)
        rp = rotate_points(float(theta), points)
        for start in range(0, len(idx_all), _CHUNK):
            idx = idx_all[start : start + _CHUNK]
            ix = np.floor((rp[None, :, 0] + txs[idx, None]) / r).astype(np.int64) - grid.ix0
            iy = np.floor((rp[None, :, 1] + tys[idx, None]) / r).astype(np.int64) - grid.iy0
            inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
            hit = np.zeros(ix.shape, dtype=bool)
            hit[inside] = occ[ix[inside], iy[inside]]
            scores[idx] = hit.sum(axis=1)
    return scores


def ransac_match(query: PointSetMap, target: PointSetMap, cfg: DmmConfig = DmmConfig()) -> DmmResult:
    """Best inlier count of the query against the target over sampled hypotheses."""
    if len(query) == 0 or len(target) == 0:
        raise InvalidArgument("both maps must be nonempty")
    grid = target_grid(target, cfg.grid_resolution)
    th, tx, ty = _hypothesis_arrays(query, target, cfg)
    scores = _score_hypotheses(query.points, th, tx, ty, grid)
    best = int(np.argmax(scores))
    score = int(scores[best])
    t = RigidTransform2(float(th[best]), float(tx[best]), float(ty[best]))
    return DmmResult(score, t, score / len(query))


def rank_database(query: PointSetMap, db: Sequence[PointSetMap], cfg: DmmConfig = DmmConfig()) -> list[tuple[str, int]]:
    """(map id, score) for every database map, best first, ties by id."""
    if not db:
        raise InvalidArgument("database is empty")
    scored = [(m.id, ransac_match(query, m, cfg).score) for m in db]
    scored.sort(key=lambda e: (-e[1], e[0]))
    return scored
