"""Command-line front end: ``partmatch synth|build|match|eval``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 partial failure.
Logs go to stderr; set PARTMATCH_LOG to a level name (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .cpd import CpdConfig
from .descriptor import build_descriptor, load_descriptor, save_descriptor
from .direct_matcher import DmmConfig, ransac_match
from .errors import EmptyPoolError, PartMatchError
from .evaluation import find_relevant_pairs
from .harness import (
    BenchConfig,
    Benchmark,
    anr_table_csv,
    histogram_csv,
    standard_methods,
    summary_json,
)
from .ingest import iter_maps, load_collection, load_map, save_collection
from .matcher import MatchStrategy, RankResult, _ranked, ranking_csv, rank_hmm, rank_imm, rerank_cascade
from .synth import SynthConfig, generate

log = logging.getLogger("partmatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3
DESCRIPTOR_SUFFIX = ".pslm"

# config keys shared by several subcommands, with their types
SHARED_KEYS = {
    "dict": str,
    "k": int,
    "scheme": str,
    "strategy": str,
    "rerank": int,
    "seed": int,
    "db_size": int,
    "workers": int,
    "out": str,
    "n_tasks": int,
    "hypotheses": int,
    "timing": bool,
}
CPD_KEYS = {f.name: f.type for f in dataclasses.fields(CpdConfig) if f.name != "seed"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(kind, text: str):
    if kind in (bool, "bool"):
        return _bool(text)
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    if isinstance(kind, str) and kind.startswith("tuple"):
        return tuple(int(v) for v in text.replace("(", "").replace(")", "").split(",") if v.strip())
    return text


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def effective_config(args, allowed: dict) -> dict:
    """Defaults < config file < flags, restricted to ``allowed`` keys."""
    file_cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(file_cfg) - set(allowed))
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    out = {}
    for key, kind in allowed.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_cfg:
            try:
                out[key] = _coerce(kind, file_cfg[key])
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from None
    return out


def write_config_echo(cfg: dict, path: Path) -> None:
    lines = [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cpd_config(cfg: dict) -> CpdConfig:
    kw = {k: cfg[k] for k in CPD_KEYS if k in cfg}
    return CpdConfig(seed=cfg.get("seed", 0), **kw)


def _dmm_config(cfg: dict) -> DmmConfig:
    return DmmConfig(hypothesis_count=cfg.get("hypotheses", 500), seed=cfg.get("seed", 0))


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    allowed = dict(SHARED_KEYS)
    allowed.update({f.name: f.type for f in dataclasses.fields(SynthConfig)})
    cfg = effective_config(args, allowed)
    if "out" not in cfg:
        raise UsageError("synth needs --out")
    kw = {f.name: cfg[f.name] for f in dataclasses.fields(SynthConfig) if f.name in cfg}
    if "seed" in cfg:
        kw["seed"] = cfg["seed"]
    scfg = SynthConfig(**kw)
    out = Path(cfg["out"])
    ds = generate(scfg)
    save_collection(ds.collection, out)
    with open(out / "pairs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "relevant_id"])
        w.writerows(ds.pairs)
    write_config_echo(dataclasses.asdict(scfg), out / "config.txt")
    log.info("wrote %d global, %d local maps and %d relevant pairs to %s", len(ds.collection.globals), len(ds.collection.locals), len(ds.pairs), out)
    return EXIT_OK


# ---------------------------------------------------------------- build


def _build_one(job):
    m, dictionary, k, cpd_cfg = job
    try:
        return build_descriptor(m, dictionary, k, cpd_cfg), None
    except EmptyPoolError as exc:
        return None, str(exc)


def cmd_build(args) -> int:
    allowed = dict(SHARED_KEYS, **CPD_KEYS)
    cfg = effective_config(args, allowed)
    for key in ("dict", "out"):
        if key not in cfg:
            raise UsageError(f"build needs --{key}")
    if not Path(cfg["dict"]).is_file():
        raise UsageError(f"dictionary map not found: {cfg['dict']}")
    if not args.inputs:
        raise UsageError("build needs at least one input map or directory")
    k = cfg.setdefault("k", 3)
    cpd_cfg = _cpd_config(cfg)
    dictionary = load_map(cfg["dict"])
    maps = iter_maps(args.inputs)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(m, dictionary, k, cpd_cfg) for m in maps]
    workers = cfg.get("workers", 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_build_one, jobs, chunksize=4))
    else:
        results = [_build_one(j) for j in jobs]
    failures = []
    with open(out / "build.log", "w", encoding="utf-8") as fh:
        fh.write("map_id\tpool_size\ttop_as\n")
        for m, (d, err) in zip(maps, results):
            if d is None:
                failures.append((m.id, err))
                continue
            save_descriptor(d, out / f"{m.id}{DESCRIPTOR_SUFFIX}")
            fh.write(f"{m.id}\t{d.meta.get('pool_size', '')}\t{d.parts[0].as_score:.6f}\n")
    with open(out / "failures.txt", "w", encoding="utf-8") as fh:
        for mid, err in failures:
            fh.write(f"{mid}\t{err}\n")
    write_config_echo(dict(cfg, **dataclasses.asdict(cpd_cfg)), out / "config.txt")
    if failures:
        log.warning("%d of %d maps produced no descriptor; see %s", len(failures), len(maps), out / "failures.txt")
        return EXIT_PARTIAL if len(failures) < len(maps) else EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------- match


def _descriptors(paths):
    out = []
    for p in paths:
        p = Path(p)
        files = sorted(p.glob(f"*{DESCRIPTOR_SUFFIX}")) if p.is_dir() else [p]
        out.extend(load_descriptor(f) for f in files)
    return out


def cmd_match(args) -> int:
    allowed = dict(SHARED_KEYS, **CPD_KEYS)
    cfg = effective_config(args, allowed)
    scheme = cfg.setdefault("scheme", "hmm")
    if scheme not in ("dmm", "imm", "hmm"):
        raise UsageError(f"unknown scheme {scheme!r}")
    strategy = cfg.setdefault("strategy", MatchStrategy.SUM_MAX.value if scheme == "imm" else MatchStrategy.SUM_MAX_WEIGHTED.value)
    try:
        MatchStrategy(strategy)
    except ValueError:
        raise UsageError(f"unknown strategy {strategy!r}") from None
    rerank = cfg.setdefault("rerank", 0)
    if rerank and scheme != "hmm":
        raise UsageError("--rerank applies to the hmm scheme only")
    if rerank and not args.db_maps:
        raise UsageError("--rerank needs the original database maps (--db-maps)")
    if scheme == "hmm" and "dict" not in cfg:
        raise UsageError("hmm needs the dictionary map (--dict)")
    if not args.query or not args.db:
        raise UsageError("match needs --query and --db")

    results: list[RankResult] = []
    if scheme == "dmm":
        dcfg = _dmm_config(cfg)
        db = iter_maps(args.db)
        for q in iter_maps(args.query):
            scores = [ransac_match(q, m, dcfg).score for m in db]
            results.append(RankResult(q.id, "dmm", _ranked([m.id for m in db], scores)))
    elif scheme == "imm":
        db = _descriptors(args.db)
        for q in _descriptors(args.query):
            results.append(rank_imm(q, db, strategy))
    else:
        dictionary = load_map(cfg["dict"])
        db = _descriptors(args.db)
        k_db = max(d.k for d in db)
        cpd_cfg = _cpd_config(cfg)
        originals = {m.id: m for m in iter_maps(args.db_maps)} if rerank else {}
        for q in iter_maps(args.query):
            res = rank_hmm(q, dictionary, db, k_db, cpd_cfg, strategy)
            if rerank:
                res = rerank_cascade(res, q, originals, rerank, _dmm_config(cfg))
            results.append(res)

    text = ranking_csv(results)
    if "out" in cfg:
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        write_config_echo(cfg, out.with_name(out.name + ".config.txt"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _read_pairs(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [(r["query_id"], r["relevant_id"]) for r in csv.DictReader(fh)]


def cmd_eval(args) -> int:
    allowed = dict(SHARED_KEYS, **CPD_KEYS)
    allowed.update({"methods": str, "pose_radius": float, "min_travel_gap": float})
    cfg = effective_config(args, allowed)
    if "out" not in cfg:
        raise UsageError("eval needs --out")
    if not args.data:
        raise UsageError("eval needs --data (a directory written by synth)")
    data = Path(args.data)
    if not data.is_dir():
        raise UsageError(f"dataset directory not found: {data}")
    coll = load_collection(data)
    pairs_path = data / "pairs.csv"
    if pairs_path.exists():
        pairs = _read_pairs(pairs_path)
    else:
        pairs = find_relevant_pairs(
            [m.id for m in coll.locals], [m.id for m in coll.globals], coll.annotations, cfg.get("pose_radius", 5.0), cfg.get("min_travel_gap", 30.0)
        )
    bench_cfg = BenchConfig(
        n_tasks=cfg.get("n_tasks", 50),
        db_size=cfg.get("db_size", 100),
        task_seed=cfg.get("seed", 0),
        pose_radius=cfg.get("pose_radius", 5.0),
        cpd=_cpd_config(cfg),
        dmm=_dmm_config(cfg),
        workers=cfg.get("workers", 1),
    )
    bench = Benchmark(coll, pairs, bench_cfg)
    methods = cfg["methods"].split(",") if cfg.get("methods") else standard_methods(bench_cfg)
    reports, _ = bench.evaluate([m.strip() for m in methods if m.strip()])

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    timing = None
    if cfg.get("timing"):
        t = bench.timing()
        timing = dict(t.as_dict(), dmm_pair_seconds=bench.dmm_pair_time())
    (out / "anr.csv").write_text(anr_table_csv(reports), encoding="utf-8")
    (out / "histogram.csv").write_text(histogram_csv(reports), encoding="utf-8")
    (out / "summary.json").write_text(summary_json(reports, bench.space(3), timing), encoding="utf-8")
    echo = dict(cfg)
    echo.update({f"bench.{k}": v for k, v in bench_cfg.as_dict().items() if k not in ("cpd", "dmm")})
    echo.update({f"cpd.{k}": v for k, v in dataclasses.asdict(bench_cfg.cpd).items()})
    echo.update({f"dmm.{k}": v for k, v in dataclasses.asdict(bench_cfg.dmm).items()})
    write_config_echo(echo, out / "config.txt")
    if len(reports) < len(methods) or bench.failures:
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------- entry


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--dict", help="dictionary map file")
    p.add_argument("--k", type=int, help="parts per descriptor")
    p.add_argument("--scheme", choices=("dmm", "imm", "hmm"))
    p.add_argument("--strategy", choices=[s.value for s in MatchStrategy])
    p.add_argument("--rerank", type=int, help="rerank the top R hmm results by direct matching")
    p.add_argument("--seed", type=int)
    p.add_argument("--db-size", dest="db_size", type=int, help="database size N per task")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="partmatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    _shared(p)

    p = sub.add_parser("build", help="build descriptor files for maps")
    _shared(p)
    p.add_argument("inputs", nargs="*", help="map files or directories of .txt maps")

    p = sub.add_parser("match", help="rank database entries for query maps")
    _shared(p)
    p.add_argument("--query", nargs="+", help="query maps (dmm, hmm) or descriptors (imm)")
    p.add_argument("--db", nargs="+", help="database maps (dmm) or descriptors (imm, hmm)")
    p.add_argument("--db-maps", dest="db_maps", nargs="+", help="original database maps for --rerank")

    p = sub.add_parser("eval", help="run the ANR battery on a synthetic dataset")
    _shared(p)
    p.add_argument("--data", help="dataset directory written by synth")
    p.add_argument("--methods", help="comma list such as dmm,imm:k3,hmm:k3+rerank20")
    p.add_argument("--n-tasks", dest="n_tasks", type=int)
    p.add_argument("--timing", action="store_true", default=None, help="also measure wall-clock matching cost")
    return parser


COMMANDS = {"synth": cmd_synth, "build": cmd_build, "match": cmd_match, "eval": cmd_eval}


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("PARTMATCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"partmatch {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PartMatchError, ValueError, KeyError, OSError) as exc:
        print(f"partmatch {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
