import csv
import json

import pytest

from partmatch.cli import main
from partmatch.descriptor import load_descriptor


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(out), "--seed", "1"]) == 0
    return out


def some_globals(data, n=6):
    return sorted((data / "globals").glob("*.txt"))[:: 40][:n]


def test_synth_writes_dataset(data):
    assert (data / "dictionary.txt").is_file()
    assert len(list((data / "globals").glob("*.txt"))) >= 200
    with open(data / "pairs.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) >= 50 and set(rows[0]) == {"query_id", "relevant_id"}
    assert "seed = 1" in (data / "config.txt").read_text()


def test_synth_is_byte_identical(data, tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--seed", "1"]) == 0
    for rel in ("dictionary.txt", "annotations.csv", "pairs.csv", "globals/g0100.txt"):
        assert (tmp_path / rel).read_bytes() == (data / rel).read_bytes()


@pytest.fixture(scope="module")
def built(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("desc")
    maps = [str(p) for p in some_globals(data)]
    code = main(["build", "--dict", str(data / "dictionary.txt"), "--out", str(out), "--k", "3", *maps])
    assert code == 0
    return out, maps


def test_build_outputs(built):
    out, maps = built
    files = sorted(out.glob("*.pslm"))
    assert len(files) == len(maps)
    for f in files:
        d = load_descriptor(f)
        assert d.k == 3 and d.payload_bits == 126
    log = (out / "build.log").read_text().splitlines()
    assert log[0] == "map_id\tpool_size\ttop_as" and len(log) == len(maps) + 1
    assert (out / "failures.txt").read_text() == ""


def test_rebuild_is_identical(data, built, tmp_path):
    out, maps = built
    assert main(["build", "--dict", str(data / "dictionary.txt"), "--out", str(tmp_path), "--k", "3", *maps]) == 0
    for f in out.glob("*.pslm"):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_build_missing_dictionary_is_usage_error(data, tmp_path):
    out = tmp_path / "none"
    code = main(["build", "--dict", str(tmp_path / "missing.txt"), "--out", str(out), str(some_globals(data)[0])])
    assert code == 1 and not out.exists()


def test_build_partial_failure(data, tmp_path):
    tiny = tmp_path / "tiny.txt"
    tiny.write_text("# id: tiny\n0 0\n")
    good = str(some_globals(data)[0])
    code = main(["build", "--dict", str(data / "dictionary.txt"), "--out", str(tmp_path / "o"), good, str(tiny)])
    assert code == 3
    assert (tmp_path / "o" / "failures.txt").read_text().startswith("tiny\t")
    assert (tmp_path / "o" / f"{some_globals(data)[0].stem}.pslm").is_file()
    code = main(["build", "--dict", str(data / "dictionary.txt"), "--out", str(tmp_path / "p"), str(tiny)])
    assert code == 2


def test_bad_map_file_is_data_error(data, tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 0\n1 2 3\n")
    code = main(["build", "--dict", str(data / "dictionary.txt"), "--out", str(tmp_path / "o"), str(bad)])
    assert code == 2
    assert "2" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_match_imm_self_first(built, tmp_path):
    out, _ = built
    files = sorted(out.glob("*.pslm"))
    csv_path = tmp_path / "r.csv"
    assert main(["match", "--scheme", "imm", "--query", str(files[0]), "--db", str(out), "--out", str(csv_path)]) == 0
    rows = list(csv.DictReader(open(csv_path)))
    assert rows[0]["rank"] == "1" and rows[0]["map_id"] == files[0].stem
    echo = (tmp_path / "r.csv.config.txt").read_text()
    assert "strategy = sum-max" in echo.splitlines()


def test_match_dmm_self_first(built, capsys):
    _, maps = built
    assert main(["match", "--scheme", "dmm", "--query", maps[1], "--db", *maps]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "query_id,rank,map_id,score"
    assert lines[1].split(",")[2] == lines[1].split(",")[0]


def test_match_hmm_rerank(data, built, tmp_path):
    out, maps = built
    csv_path = tmp_path / "h.csv"
    code = main(
        ["match", "--dict", str(data / "dictionary.txt"), "--query", maps[2], "--db", str(out), "--db-maps", *maps, "--rerank", "3", "--out", str(csv_path)]
    )
    assert code == 0
    rows = list(csv.DictReader(open(csv_path)))
    assert len(rows) == len(maps)
    assert "strategy = sum-max-weighted" in (tmp_path / "h.csv.config.txt").read_text()


def test_match_usage_errors(built):
    out, maps = built
    assert main(["match", "--scheme", "imm", "--rerank", "5", "--query", maps[0], "--db", str(out)]) == 1
    assert main(["match", "--scheme", "hmm", "--query", maps[0], "--db", str(out)]) == 1
    assert main(["match", "--scheme", "dmm", "--query", maps[0]]) == 1


def test_config_precedence(built, tmp_path):
    out, _ = built
    files = sorted(out.glob("*.pslm"))
    conf = tmp_path / "c.txt"
    conf.write_text("scheme = imm\nstrategy = max-max\n")
    csv_path = tmp_path / "r.csv"
    assert main(["match", "--config", str(conf), "--strategy", "sum-max", "--query", str(files[0]), "--db", str(out), "--out", str(csv_path)]) == 0
    echo = (tmp_path / "r.csv.config.txt").read_text().splitlines()
    assert "scheme = imm" in echo and "strategy = sum-max" in echo
    conf.write_text("colour = blue\n")
    assert main(["match", "--config", str(conf), "--query", str(files[0]), "--db", str(out)]) == 1


def run_eval(data, out):
    return main(["eval", "--data", str(data), "--out", str(out), "--methods", "dmm,imm:k3,hmm:k3", "--n-tasks", "2", "--db-size", "20"])


def test_eval_reports_are_deterministic(data, tmp_path):
    assert run_eval(data, tmp_path / "a") == 0
    assert run_eval(data, tmp_path / "b") == 0
    for name in ("anr.csv", "histogram.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a" / "anr.csv")))
    assert [r["method"] for r in rows] == ["dmm", "imm:k3", "hmm:k3"]
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert set(summary) == {"anr", "histogram", "space", "timing"}
