"""Descriptor matching: box overlap similarity, aggregate scores and database ranking."""

from __future__ import annotations

import csv
import enum
import io
import math
import time
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .cpd import CpdConfig, Part, discover_parts, with_pool_size
from .descriptor import MapDescriptor
from .direct_matcher import DmmConfig, ransac_match
from .errors import IncompatibleDescriptorError, InvalidArgument, MissingMapError, MissingScoresError
from .geometry import BBox, Point2, PointSetMap, overlap_area

HMM_POOL_SIZE = 100


class MatchStrategy(str, enum.Enum):
    MAX_MAX = "max-max"
    SUM_MAX = "sum-max"
    SUM_MAX_WEIGHTED = "sum-max-weighted"


@dataclass(frozen=True)
class RankResult:
    """A ranking of database maps for one query.

    Entries are ordered best first.  When ``reranked`` is r > 0, the first r
    entries carry direct-matching scores (inlier fraction) and the rest keep
    the descriptor scores.
    """

    query_id: str
    strategy: str
    ranking: tuple[tuple[str, float], ...]
    elapsed: float = 0.0
    evaluations: int = 0
    reranked: int = 0

    def __len__(self) -> int:
        return len(self.ranking)

    @property
    def ids(self) -> list[str]:
        return [mid for mid, _ in self.ranking]

    def rank_of(self, map_id: str) -> int:
        for k, (mid, _) in enumerate(self.ranking, start=1):
            if mid == map_id:
                return k
        raise KeyError(map_id)


def region_similarity(a: BBox, b: BBox) -> float:
    """Overlap area normalized by the geometric mean of the two box areas."""
    if a.area <= 0 or b.area <= 0:
        raise InvalidArgument("region similarity needs boxes of positive area")
    return overlap_area(a, b) / math.sqrt(a.area * b.area)


def _box_array(parts: Sequence[Part]) -> np.ndarray:
    arr = np.array([p.descriptor_bb.as_tuple() for p in parts], dtype=np.float64).reshape(-1, 4)
    area = (arr[:, 1] - arr[:, 0]) * (arr[:, 3] - arr[:, 2])
    if np.any(area <= 0):
        raise InvalidArgument("region similarity needs boxes of positive area")
    return arr


def similarity_matrix(qa: np.ndarray, da: np.ndarray) -> np.ndarray:
    """Pairwise region similarity between rows of two (n, 4) box arrays."""
    w = np.minimum(qa[:, None, 1], da[None, :, 1]) - np.maximum(qa[:, None, 0], da[None, :, 0])
    h = np.minimum(qa[:, None, 3], da[None, :, 3]) - np.maximum(qa[:, None, 2], da[None, :, 2])
    inter = np.clip(w, 0, None) * np.clip(h, 0, None)
    qarea = (qa[:, 1] - qa[:, 0]) * (qa[:, 3] - qa[:, 2])
    darea = (da[:, 1] - da[:, 0]) * (da[:, 3] - da[:, 2])
    return inter / np.sqrt(qarea[:, None] * darea[None, :])


def _weights(query: MapDescriptor, strategy: MatchStrategy) -> Optional[np.ndarray]:
    if strategy is not MatchStrategy.SUM_MAX_WEIGHTED:
        return None
    if not query.has_scores:
        raise MissingScoresError(f"descriptor {query.map_id!r} has no appearance scores")
    return np.array([p.as_score for p in query.parts], dtype=np.float64)


def _reduce(best_per_query_part: np.ndarray, strategy: MatchStrategy, weights) -> np.ndarray:
    """Collapse the per-query-part maxima (axis 0) into one score per column."""
    if strategy is MatchStrategy.MAX_MAX:
        return best_per_query_part.max(axis=0)
    if strategy is MatchStrategy.SUM_MAX:
        return best_per_query_part.sum(axis=0)
    return weights @ best_per_query_part


def _check_dictionary(query: MapDescriptor, entries: Sequence[MapDescriptor]) -> None:
    for d in entries:
        if d.dictionary_id != query.dictionary_id:
            raise IncompatibleDescriptorError(
                f"{d.map_id!r} uses dictionary {d.dictionary_id!r}, query uses {query.dictionary_id!r}"
            )


def aggregate_score(query: MapDescriptor, db_entry: MapDescriptor, strategy=MatchStrategy.SUM_MAX) -> float:
    strategy = MatchStrategy(strategy)
    _check_dictionary(query, [db_entry])
    w = _weights(query, strategy)
    sim = similarity_matrix(_box_array(query.parts), _box_array(db_entry.parts))
    return float(_reduce(sim.max(axis=1)[:, None], strategy, w)[0])


def score_database(query: MapDescriptor, db: Sequence[MapDescriptor], strategy) -> np.ndarray:
    """Aggregate scores against every entry, evaluated as one stacked matrix."""
    strategy = MatchStrategy(strategy)
    _check_dictionary(query, db)
    w = _weights(query, strategy)
    sizes = np.array([d.k for d in db])
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    boxes = _box_array([p for d in db for p in d.parts])
    sim = similarity_matrix(_box_array(query.parts), boxes)
    best = np.maximum.reduceat(sim, starts, axis=1)
    return _reduce(best, strategy, w)


def _ranked(ids: Sequence[str], scores) -> tuple[tuple[str, float], ...]:
    pairs = [(mid, float(s)) for mid, s in zip(ids, scores)]
    pairs.sort(key=lambda e: (-e[1], e[0]))
    return tuple(pairs)


def rank_imm(query: MapDescriptor, db: Sequence[MapDescriptor], strategy=MatchStrategy.SUM_MAX) -> RankResult:
    """Rank database descriptors against a query descriptor."""
    if not db:
        raise InvalidArgument("database is empty")
    strategy = MatchStrategy(strategy)
    t0 = time.perf_counter()
    scores = score_database(query, db, strategy)
    ranking = _ranked([d.map_id for d in db], scores)
    elapsed = time.perf_counter() - t0
    evals = query.k * sum(d.k for d in db)
    return RankResult(query.map_id, strategy.value, ranking, elapsed, evals)


def pool_descriptor(query_map: PointSetMap, dictionary: PointSetMap, pool: Sequence[Part], resolution: float = 0.1) -> MapDescriptor:
    """A query descriptor made of a whole part pool rather than its top K."""
    ext = query_map.extent
    return MapDescriptor(
        query_map.id, dictionary.id, tuple(pool), Point2(ext.x_begin, ext.y_begin), dictionary.extent, resolution
    )


def rank_hmm(
    query_map: PointSetMap,
    dictionary: PointSetMap,
    db: Sequence[MapDescriptor],
    k_db: int,
    cpd_cfg: CpdConfig = CpdConfig(),
    strategy=MatchStrategy.SUM_MAX_WEIGHTED,
) -> RankResult:
    """Rank compact database descriptors against the full part pool of the original query map."""
    if any(d.k > k_db for d in db):
        raise InvalidArgument(f"database descriptors must hold at most k_db={k_db} parts")
    cfg = with_pool_size(cpd_cfg, HMM_POOL_SIZE)
    t0 = time.perf_counter()
    pool = discover_parts(query_map, dictionary, cfg)
    result = rank_imm(pool_descriptor(query_map, dictionary, pool, cfg.grid_resolution), db, strategy)
    return replace(result, elapsed=time.perf_counter() - t0)


def rerank_cascade(
    hmm_result: RankResult,
    query_map: PointSetMap,
    original_db: Mapping[str, PointSetMap],
    r: int,
    dmm_cfg: DmmConfig = DmmConfig(),
) -> RankResult:
    """Reorder the top r entries by direct-matching score; the rest keep their order.

    Equal direct scores keep the incoming order.
    """
    if r < 0:
        raise InvalidArgument("r must be >= 0")
    r = min(r, len(hmm_result.ranking))
    top = hmm_result.ranking[:r]
    missing = [mid for mid, _ in top if mid not in original_db]
    if missing:
        raise MissingMapError(f"original maps missing for {missing}")
    t0 = time.perf_counter()
    rescored = [(mid, ransac_match(query_map, original_db[mid], dmm_cfg).normalized_score) for mid, _ in top]
    rescored.sort(key=lambda e: -e[1])
    ranking = tuple(rescored) + hmm_result.ranking[r:]
    return replace(
        hmm_result,
        ranking=ranking,
        elapsed=hmm_result.elapsed + time.perf_counter() - t0,
        reranked=r,
        strategy=f"{hmm_result.strategy}+rerank{r}",
    )


RANKING_HEADER = ("query_id", "rank", "map_id", "score")


def ranking_csv(results: Sequence[RankResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RANKING_HEADER)
    for res in results:
        for k, (mid, score) in enumerate(res.ranking, start=1):
            w.writerow([res.query_id, k, mid, repr(float(score))])
    return buf.getvalue()


def read_ranking_csv(text: str) -> list[RankResult]:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        rows.setdefault(row["query_id"], []).append((int(row["rank"]), row["map_id"], float(row["score"])))
    out = []
    for qid, entries in rows.items():
        entries.sort()
        out.append(RankResult(qid, "", tuple((mid, s) for _, mid, s in entries)))
    return out
