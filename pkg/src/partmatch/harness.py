"""Benchmark battery: task sets, part pools, every matching method and its reports."""

from __future__ import annotations

import csv
import gc
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

from .cpd import CpdConfig, Part, dictionary_grid, discover_parts, with_pool_size
from .descriptor import MapDescriptor, build_descriptor
from .direct_matcher import DmmConfig, ransac_match
from .errors import EmptyPoolError, InvalidArgument
from .evaluation import (
    AnrReport,
    MatchTask,
    TimingReport,
    build_tasks,
    compute_anr,
    linear_fit,
    rank_random,
    space_report,
)
from .geometry import PointSetMap
from .ingest import MapCollection
from .matcher import HMM_POOL_SIZE, MatchStrategy, RankResult, _ranked, pool_descriptor, rank_imm, rerank_cascade
from .synth import SynthConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchConfig:
    n_tasks: int = 50
    db_size: int = 100
    task_seed: int = 0
    k_values: tuple[int, ...] = (1, 2, 3, 4, 5)
    rerank: tuple[int, ...] = (10, 20)
    # database descriptor size used under the rerank cascade
    rerank_k: int = 3
    imm_strategy: str = MatchStrategy.SUM_MAX.value
    hmm_strategy: str = MatchStrategy.SUM_MAX_WEIGHTED.value
    pose_radius: float = 5.0
    cpd: CpdConfig = field(default_factory=CpdConfig)
    dmm: DmmConfig = field(default_factory=DmmConfig)
    workers: int = 1

    def as_dict(self) -> dict:
        return asdict(self)


def standard_methods(cfg: BenchConfig) -> list[str]:
    """The dMM / iMM / hMM / rerank rows of the standard table."""
    rows = ["dmm"]
    rows += [f"imm:k{k}" for k in cfg.k_values]
    rows += [f"hmm:k{k}" for k in cfg.k_values]
    rows += [f"hmm:k{cfg.rerank_k}+rerank{r}" for r in cfg.rerank]
    return rows


def parse_method(label: str) -> tuple[str, Optional[int], int, Optional[str]]:
    """``scheme[:kK][+rerankR][@strategy]`` -> (scheme, k, r, strategy)."""
    strategy = None
    if "@" in label:
        label, strategy = label.split("@", 1)
        MatchStrategy(strategy)
    rerank = 0
    if "+rerank" in label:
        label, r = label.split("+rerank", 1)
        rerank = int(r)
    scheme, _, kpart = label.partition(":")
    k = int(kpart[1:]) if kpart else None
    if scheme not in ("dmm", "imm", "hmm", "random"):
        raise InvalidArgument(f"unknown scheme {scheme!r}")
    if scheme in ("imm", "hmm") and (k is None or k < 1):
        raise InvalidArgument(f"method {label!r} needs a part count, e.g. {scheme}:k3")
    if rerank and scheme != "hmm":
        raise InvalidArgument("reranking applies to hmm only")
    return scheme, k, rerank, strategy


@contextmanager
def _gc_paused():
    was = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was:
            gc.enable()


def _pool_job(args):
    m, dictionary, cfg = args
    try:
        return discover_parts(m, dictionary, cfg)
    except EmptyPoolError:
        return None


class Benchmark:
    """A fixed task set over a map collection; part pools are discovered once per map."""

    def __init__(self, collection: MapCollection, pairs: Sequence[tuple[str, str]], cfg: BenchConfig = BenchConfig()):
        self.collection = collection
        self.cfg = cfg
        self.maps = collection.by_id()
        self.tasks: list[MatchTask] = build_tasks(
            pairs,
            [m.id for m in collection.globals],
            collection.annotations,
            cfg.db_size,
            cfg.n_tasks,
            cfg.task_seed,
            cfg.pose_radius,
        )
        self.pool_cfg = with_pool_size(cfg.cpd, HMM_POOL_SIZE)
        self._pools: Optional[dict[str, list[Part]]] = None
        self._descriptors: dict[int, dict[str, MapDescriptor]] = {}
        self.failures: list[str] = []

    @property
    def map_ids(self) -> list[str]:
        ids = {t.query for t in self.tasks}
        for t in self.tasks:
            ids.update(t.database)
        return sorted(ids)

    @property
    def pools(self) -> dict[str, list[Part]]:
        if self._pools is None:
            self._pools = self._discover(self.map_ids)
        return self._pools

    def _discover(self, ids: Sequence[str]) -> dict[str, list[Part]]:
        t0 = time.perf_counter()
        dictionary = self.collection.dictionary
        jobs = [(self.maps[i], dictionary, self.pool_cfg) for i in ids]
        if self.cfg.workers > 1:
            with ProcessPoolExecutor(self.cfg.workers) as ex:
                results = list(ex.map(_pool_job, jobs, chunksize=8))
        else:
            dictionary_grid(dictionary, self.pool_cfg.grid_resolution)
            results = [_pool_job(j) for j in jobs]
        pools = {}
        for i, pool in zip(ids, results):
            if pool is None:
                self.failures.append(i)
            else:
                pools[i] = pool
        log.info("discovered part pools for %d maps in %.1fs (%d failed)", len(ids), time.perf_counter() - t0, len(self.failures))
        return pools

    def descriptors(self, k: int) -> dict[str, MapDescriptor]:
        """Top-k descriptors as they read back from disk."""
        if k not in self._descriptors:
            dictionary = self.collection.dictionary
            self._descriptors[k] = {
                i: build_descriptor(self.maps[i], dictionary, k, self.cfg.cpd, pool=p).quantized()
                for i, p in self.pools.items()
            }
        return self._descriptors[k]

    def query_pool(self, qid: str) -> MapDescriptor:
        return pool_descriptor(self.maps[qid], self.collection.dictionary, self.pools[qid], self.pool_cfg.grid_resolution)

    def _usable(self) -> list[MatchTask]:
        ok = set(self.pools)
        return [t for t in self.tasks if t.query in ok and all(i in ok for i in t.database)]

    def run_dmm(self, tasks: Optional[Sequence[MatchTask]] = None) -> list[RankResult]:
        out = []
        for t in tasks if tasks is not None else self.tasks:
            q = self.maps[t.query]
            t0 = time.perf_counter()
            scores = [ransac_match(q, self.maps[i], self.cfg.dmm).score for i in t.database]
            out.append(RankResult(t.query, "dmm", _ranked(list(t.database), scores), time.perf_counter() - t0, len(t.database)))
        return out

    def run_imm(self, k: int, strategy: Optional[str] = None) -> list[RankResult]:
        d = self.descriptors(k)
        strategy = strategy or self.cfg.imm_strategy
        return [rank_imm(d[t.query], [d[i] for i in t.database], strategy) for t in self._usable()]

    def run_hmm(self, k: int, strategy: Optional[str] = None) -> list[RankResult]:
        d = self.descriptors(k)
        strategy = strategy or self.cfg.hmm_strategy
        return [rank_imm(self.query_pool(t.query), [d[i] for i in t.database], strategy) for t in self._usable()]

    def run_rerank(self, k: int, r: int, strategy: Optional[str] = None) -> list[RankResult]:
        return [
            rerank_cascade(res, self.maps[res.query_id], self.maps, r, self.cfg.dmm) for res in self.run_hmm(k, strategy)
        ]

    def run_random(self, seed: int = 0) -> list[RankResult]:
        return [rank_random(t.query, t.database, seed + n) for n, t in enumerate(self.tasks)]

    def run(self, label: str) -> list[RankResult]:
        scheme, k, r, strategy = parse_method(label)
        if scheme == "dmm":
            return self.run_dmm()
        if scheme == "random":
            return self.run_random(self.cfg.task_seed)
        if scheme == "imm":
            return self.run_imm(k, strategy)
        if r:
            return self.run_rerank(k, r, strategy)
        return self.run_hmm(k, strategy)

    def evaluate(self, labels: Iterable[str]) -> tuple[list[AnrReport], dict[str, list[RankResult]]]:
        """ANR per method; a method that cannot run is logged and skipped."""
        gt = {t.query: t.ground_truth for t in self.tasks}
        reports, results = [], {}
        for label in labels:
            t0 = time.perf_counter()
            try:
                res = self.run(label)
                reports.append(compute_anr([(r, gt[r.query_id]) for r in res], label))
            except (InvalidArgument, KeyError) as exc:
                log.error("method %s failed: %s", label, exc)
                continue
            results[label] = res
            log.info("%s: ANR %.2f over %d tasks (%.1fs)", label, reports[-1].anr, len(res), time.perf_counter() - t0)
        return reports, results

    def timing(self, k_values: Sequence[int] = (1, 2, 3, 4, 5), repeats: int = 5, db_scale: int = 1) -> TimingReport:
        """Per-pair descriptor matching time: full query pool against k-part database descriptors.

        ``db_scale`` repeats each task's database that many times so the
        measured work dominates fixed per-call costs.
        """
        tasks = self._usable()
        queries = {t.query: self.query_pool(t.query) for t in tasks}
        descs = [self.descriptors(k) for k in k_values]
        totals = [0.0] * len(k_values)
        pairs = [0] * len(k_values)
        # K values alternate inside each task's repeats so machine drift hits all
        # rows alike; the fastest repeat per task keeps one stall from spoiling a row
        with _gc_paused():
            for t in tasks:
                dbs = [[d[i] for i in t.database] * db_scale for d in descs]
                best = [float("inf")] * len(dbs)
                for _ in range(max(repeats, 1)):
                    for j, db in enumerate(dbs):
                        t0 = time.perf_counter()
                        rank_imm(queries[t.query], db, self.cfg.hmm_strategy)
                        best[j] = min(best[j], time.perf_counter() - t0)
                for j, db in enumerate(dbs):
                    totals[j] += best[j]
                    pairs[j] += len(db)
        rows = [(int(k), tot / n) for k, tot, n in zip(k_values, totals, pairs)]
        slope, intercept, r2 = linear_fit([k for k, _ in rows], [t for _, t in rows])
        return TimingReport(rows, slope, intercept, r2, len(set(k_values)) < 2 or len(tasks) * self.cfg.db_size * db_scale < 2)

    def db_scaling(self, k: int = 3, scales: tuple[int, int] = (10, 20), repeats: int = 5) -> tuple[float, float]:
        """Total descriptor matching seconds at two database sizes.

        The two sizes alternate inside each task's repeats so slow machine
        drift hits both equally.
        """
        tasks = self._usable()
        d = self.descriptors(k)
        totals = [0.0, 0.0]
        for t in tasks:
            q = self.query_pool(t.query)
            base = [d[i] for i in t.database]
            dbs = [base * s for s in scales]
            best = [float("inf"), float("inf")]
            with _gc_paused():
                for _ in range(max(repeats, 1)):
                    for j, db in enumerate(dbs):
                        t0 = time.perf_counter()
                        rank_imm(q, db, self.cfg.hmm_strategy)
                        best[j] = min(best[j], time.perf_counter() - t0)
            totals[0] += best[0]
            totals[1] += best[1]
        return totals[0], totals[1]

    def dmm_pair_time(self, n_tasks: int = 5) -> float:
        res = self.run_dmm(self.tasks[:n_tasks])
        return sum(r.elapsed for r in res) / sum(len(r) for r in res)

    def space(self, k: int = 3):
        d = self.descriptors(k)
        return space_report([d[i] for i in sorted(d)], self.maps)


def anr_table_csv(reports: Sequence[AnrReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "anr", "tasks"])
    for r in reports:
        w.writerow([r.label, f"{r.anr:.6f}", len(r.normalized_ranks)])
    return buf.getvalue()


def histogram_csv(reports: Sequence[AnrReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "fraction", "cumulative"])
    for r in reports:
        for frac, share in r.histogram:
            w.writerow([r.label, f"{frac:.2f}", f"{share:.6f}"])
    return buf.getvalue()


def summary_json(reports: Sequence[AnrReport], space=None, timing: Optional[dict] = None) -> str:
    doc = {
        "anr": {r.label: round(r.anr, 6) for r in reports},
        "histogram": {r.label: [[f, round(c, 6)] for f, c in r.histogram] for r in reports},
        "timing": timing,
        "space": None
        if space is None
        else [{"map_id": s.map_id, "descriptor_bits": s.descriptor_bits, "raw_bits": s.raw_bits, "ratio": round(s.ratio, 6)} for s in space],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def synth_benchmark(synth_cfg: SynthConfig = SynthConfig(), cfg: BenchConfig = BenchConfig()) -> Benchmark:
    from .synth import generate

    ds = generate(synth_cfg)
    return Benchmark(ds.collection, ds.pairs, cfg)
