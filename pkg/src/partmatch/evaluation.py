"""Relevant pairs, match tasks, averaged normalized rank and cost reports."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidArgument

HISTOGRAM_STEP = 0.05


@dataclass(frozen=True)
class MatchTask:
    query: str
    database: tuple[str, ...]
    ground_truth: str

    def __post_init__(self):
        if list(self.database).count(self.ground_truth) != 1:
            raise InvalidArgument("ground truth must appear exactly once in the database")

    @property
    def n(self) -> int:
        return len(self.database)


@dataclass
class AnrReport:
    label: str
    normalized_ranks: list[float]
    anr: float
    histogram: list[tuple[float, float]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "anr": self.anr,
            "tasks": len(self.normalized_ranks),
            "histogram": [[f, c] for f, c in self.histogram],
        }


def _annotation(annotations, mid):
    try:
        return annotations[mid]
    except KeyError:
        raise InvalidArgument(f"map {mid!r} has no pose/travel annotation") from None


def _distance(a, b) -> float:
    return math.hypot(a.pose[0] - b.pose[0], a.pose[1] - b.pose[1])


def find_relevant_pairs(
    query_ids: Sequence[str],
    candidate_ids: Sequence[str],
    annotations: Mapping,
    pose_radius: float = 5.0,
    min_travel_gap: float = 30.0,
) -> list[tuple[str, str]]:
    """(query, candidate) pairs that are close in pose but far apart in travel."""
    pairs = []
    cands = [(c, _annotation(annotations, c)) for c in candidate_ids]
    for q in query_ids:
        qa = _annotation(annotations, q)
        for c, ca in cands:
            if c == q:
                continue
            if _distance(qa, ca) <= pose_radius and abs(qa.travel - ca.travel) >= min_travel_gap:
                pairs.append((q, c))
    return pairs


def build_tasks(
    pairs: Sequence[tuple[str, str]],
    global_ids: Sequence[str],
    annotations: Mapping,
    db_size: int = 100,
    n_tasks: Optional[int] = None,
    seed: int = 0,
    pose_radius: float = 5.0,
) -> list[MatchTask]:
    """One task per query: its nearest relevant map plus db_size-1 far-away maps."""
    if db_size < 1:
        raise InvalidArgument("db_size must be >= 1")
    rng = np.random.default_rng(seed)
    by_query: dict[str, list[str]] = {}
    for q, c in pairs:
        by_query.setdefault(q, []).append(c)
    queries = sorted(by_query)
    if n_tasks is not None and n_tasks < len(queries):
        pick = np.sort(rng.choice(len(queries), size=n_tasks, replace=False))
        queries = [queries[i] for i in pick]
    gids = sorted(global_ids)
    tasks = []
    for q in queries:
        qa = _annotation(annotations, q)
        gt = min(by_query[q], key=lambda c: (_distance(qa, _annotation(annotations, c)), c))
        far = [g for g in gids if g != q and _distance(qa, _annotation(annotations, g)) > pose_radius]
        if len(far) < db_size - 1:
            raise InvalidArgument(f"only {len(far)} irrelevant maps available for query {q!r}")
        chosen = [far[i] for i in rng.choice(len(far), size=db_size - 1, replace=False)]
        tasks.append(MatchTask(q, tuple(sorted(chosen + [gt])), gt))
    return tasks


def normalized_rank(rank: int, n: int) -> float:
    return 100.0 * rank / n


def cumulative_histogram(normalized: Sequence[float], step: float = HISTOGRAM_STEP) -> list[tuple[float, float]]:
    """(rank fraction, share of tasks whose normalized rank is at most that fraction)."""
    nr = np.asarray(normalized, dtype=np.float64)
    bins = int(round(1.0 / step))
    out = []
    for b in range(1, bins + 1):
        frac = round(b * step, 10)
        share = float(np.count_nonzero(nr <= 100.0 * frac + 1e-9)) / len(nr) if len(nr) else 0.0
        out.append((frac, share))
    return out


def compute_anr(results: Sequence[tuple], label: str = "") -> AnrReport:
    """ANR over (RankResult, ground-truth id) pairs; ranks are 1-based, in percent of N."""
    if not results:
        raise InvalidArgument("no results to evaluate")
    normalized = []
    for res, gt in results:
        try:
            rank = res.rank_of(gt)
        except KeyError:
            raise InvalidArgument(f"ground truth {gt!r} missing from the ranking of {res.query_id!r}") from None
        normalized.append(normalized_rank(rank, len(res)))
    return AnrReport(label, normalized, float(np.mean(normalized)), cumulative_histogram(normalized))


@dataclass
class TimingReport:
    rows: list[tuple[int, float]]
    slope: float
    intercept: float
    r2: float
    degenerate: bool

    def as_dict(self) -> dict:
        return {
            "rows": [[k, t] for k, t in self.rows],
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "degenerate": self.degenerate,
        }


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.ptp(x) == 0:
        return 0.0, float(y.mean()) if len(y) else 0.0, 0.0
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def timing_report(method: Callable[[int], int], k_values: Sequence[int], repeats: int = 5) -> TimingReport:
    """Mean wall-clock seconds per query-database pair for each k.

    ``method(k)`` runs one batch of matching at k parts and returns the number
    of pairs it matched.  The fastest of ``repeats`` runs is kept.
    """
    rows = []
    pairs_seen = []
    for k in k_values:
        best = math.inf
        for _ in range(max(repeats, 1)):
            t0 = time.perf_counter()
            n_pairs = method(k)
            dt = time.perf_counter() - t0
            best = min(best, dt / max(n_pairs, 1))
        rows.append((int(k), best))
        pairs_seen.append(n_pairs)
    slope, intercept, r2 = linear_fit([k for k, _ in rows], [t for _, t in rows])
    degenerate = len(set(k_values)) < 2 or min(pairs_seen) < 2
    return TimingReport(rows, slope, intercept, r2, degenerate)


@dataclass(frozen=True)
class SpaceRow:
    map_id: str
    descriptor_bits: int
    raw_bits: int

    @property
    def ratio(self) -> float:
        return self.raw_bits / self.descriptor_bits


RAW_BITS_PER_POINT = 14


def space_report(descriptors: Sequence, original_maps: Mapping) -> list[SpaceRow]:
    """Descriptor payload vs raw map size at 14 bits per point."""
    rows = []
    for d in descriptors:
        m = original_maps[d.map_id]
        rows.append(SpaceRow(d.map_id, d.payload_bits, RAW_BITS_PER_POINT * len(m)))
    return rows


def rank_random(query_id: str, db_ids: Sequence[str], seed: int = 0):
    """A ranking with uniformly random scores; the chance-level reference."""
    from .matcher import RankResult, _ranked

    rng = np.random.default_rng(seed)
    return RankResult(query_id, "random", _ranked(list(db_ids), rng.random(len(db_ids))))
