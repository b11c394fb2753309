import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from partmatch.descriptor import MapDescriptor
from partmatch.cpd import Part
from partmatch.errors import InvalidArgument
from partmatch.evaluation import (
    MatchTask,
    build_tasks,
    compute_anr,
    cumulative_histogram,
    find_relevant_pairs,
    linear_fit,
    normalized_rank,
    rank_random,
    space_report,
    timing_report,
)
from partmatch.geometry import BBox, Point2, PointSetMap
from partmatch.ingest import Annotation
from partmatch.matcher import RankResult


def ann(x, y, travel):
    return Annotation(Point2(x, y), travel)


def ranking(gt_rank, n=100, gt="gt"):
    ids = [f"m{i:03d}" for i in range(n - 1)]
    ids.insert(gt_rank - 1, gt)
    return RankResult("q", "s", tuple((mid, float(n - i)) for i, mid in enumerate(ids)))


def test_relevant_pair_examples():
    a = {"q": ann(0, 0, 0.0), "far_travel": ann(0, 0, 100.0), "adjacent": ann(0.5, 0, 10.0), "far_pose": ann(50, 0, 200.0)}
    pairs = find_relevant_pairs(["q"], list(a), a)
    assert pairs == [("q", "far_travel")]


def test_square_loop_pairs_at_revisited_corners():
    corners = [(0, 0), (40, 0), (40, 40), (0, 40)]
    annotations = {}
    for lap in range(2):
        for i, (x, y) in enumerate(corners):
            annotations[f"L{lap}c{i}"] = ann(x, y, 160.0 * lap + 40.0 * i)
    pairs = find_relevant_pairs(sorted(annotations), sorted(annotations), annotations)
    expected = {(f"L{a}c{i}", f"L{1 - a}c{i}") for a in range(2) for i in range(4)}
    assert set(pairs) == expected


def test_missing_annotation():
    with pytest.raises(InvalidArgument):
        find_relevant_pairs(["q"], ["x"], {"q": ann(0, 0, 0)})


def build_world(n_globals=150, seed=0):
    rng = np.random.default_rng(seed)
    annotations = {f"g{i:03d}": ann(*rng.uniform(0, 200, 2), float(i)) for i in range(n_globals)}
    annotations["q0"] = ann(*annotations["g010"].pose, 500.0)
    annotations["q1"] = ann(*annotations[f"g{n_globals // 3:03d}"].pose, 500.0)
    return annotations


def test_build_tasks_structure():
    annotations = build_world()
    gids = [k for k in annotations if k.startswith("g")]
    pairs = find_relevant_pairs(["q0", "q1"], gids, annotations)
    tasks = build_tasks(pairs, gids, annotations, db_size=100, seed=3)
    assert [t.query for t in tasks] == ["q0", "q1"]
    for t in tasks:
        assert t.n == 100 and len(set(t.database)) == 100
        qa = annotations[t.query]
        for mid in t.database:
            if mid != t.ground_truth:
                d = np.hypot(*np.subtract(annotations[mid].pose, qa.pose))
                assert d > 5.0
    assert tasks == build_tasks(pairs, gids, annotations, db_size=100, seed=3)


def test_build_tasks_not_enough_irrelevant_maps():
    annotations = build_world(20)
    gids = [k for k in annotations if k.startswith("g")]
    pairs = find_relevant_pairs(["q0"], gids, annotations)
    with pytest.raises(InvalidArgument):
        build_tasks(pairs, gids, annotations, db_size=100)


def test_task_requires_single_ground_truth():
    with pytest.raises(InvalidArgument):
        MatchTask("q", ("a", "b"), "c")


def test_anr_single_task():
    rep = compute_anr([(ranking(5), "gt")])
    assert rep.normalized_ranks == [5.0] and rep.anr == 5.0


def test_anr_perfect_scorer():
    rep = compute_anr([(ranking(1), "gt")] * 100)
    assert rep.anr == 1.0


def test_anr_invariant_under_relabeling():
    res = ranking(17)
    relabeled = RankResult("q", "s", tuple((mid if mid == "gt" else mid[::-1] + "x", s) for mid, s in res.ranking))
    assert compute_anr([(res, "gt")]).anr == compute_anr([(relabeled, "gt")]).anr


def test_anr_missing_ground_truth():
    with pytest.raises(InvalidArgument):
        compute_anr([(ranking(3), "nope")])
    with pytest.raises(InvalidArgument):
        compute_anr([])


def test_random_scorer_near_fifty():
    ids = [f"m{i:03d}" for i in range(100)]
    results = [(rank_random("q", ids, seed=s), ids[s % 100]) for s in range(4000)]
    assert abs(compute_anr(results).anr - 50.5) < 3.0


def test_normalized_rank_is_percent():
    assert normalized_rank(1, 100) == 1.0
    assert normalized_rank(100, 100) == 100.0
    assert normalized_rank(3, 50) == 6.0


@given(st.lists(st.floats(1, 100), min_size=1, max_size=200))
def test_histogram_monotone_and_complete(values):
    h = cumulative_histogram(values)
    shares = [c for _, c in h]
    assert shares == sorted(shares)
    assert shares[-1] == 1.0
    assert h[0][0] == 0.05 and h[-1][0] == 1.0


def test_linear_fit_exact():
    slope, intercept, r2 = linear_fit([1, 2, 3, 4], [3, 5, 7, 9])
    assert slope == pytest.approx(2.0) and intercept == pytest.approx(1.0) and r2 == pytest.approx(1.0)


def test_timing_report_linear_method():
    # cost grows with k; 200 pairs per call
    def method(k):
        x = np.ones(20_000 * k)
        for _ in range(5):
            x = np.sqrt(x)
        return 200

    rep = timing_report(method, [1, 2, 3, 4, 5], repeats=3)
    assert [k for k, _ in rep.rows] == [1, 2, 3, 4, 5]
    assert rep.slope > 0 and not rep.degenerate


def test_timing_single_entry_is_flagged():
    rep = timing_report(lambda k: 1, [1, 2], repeats=1)
    assert rep.degenerate and len(rep.rows) == 2
    rep = timing_report(lambda k: 10, [3], repeats=1)
    assert rep.degenerate and rep.r2 == 0.0


def descriptor(map_id, k):
    parts = tuple(Part(BBox(0, 1, 0, 1), BBox(0, 1, 0, 1), 1.0) for _ in range(k))
    return MapDescriptor(map_id, "d", parts, Point2(0, 0), BBox(0, 9, 0, 9))


def test_space_examples():
    maps = {"big": PointSetMap("big", np.zeros((500, 2))), "small": PointSetMap("small", np.zeros((100, 2)))}
    rows = space_report([descriptor("big", 3), descriptor("small", 5)], maps)
    assert (rows[0].raw_bits, rows[0].descriptor_bits) == (7000, 126)
    assert rows[0].ratio == pytest.approx(55.6, abs=0.05)
    assert rows[1].descriptor_bits == 210
    assert rows[1].ratio == pytest.approx(6.7, abs=0.05)


def test_rank_random_deterministic():
    ids = ["a", "b", "c", "d"]
    assert rank_random("q", ids, 1) == rank_random("q", ids, 1)
    assert sorted(rank_random("q", ids, 1).ids) == ids
