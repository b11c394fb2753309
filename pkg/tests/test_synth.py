import numpy as np
import pytest

from partmatch.geometry import RigidTransform2, inlier_count, rasterize
from partmatch.synth import SynthConfig, generate, loop_path, ring_cells, sample_walls


@pytest.fixture(scope="module")
def dataset():
    return generate(SynthConfig())


def test_default_sizes(dataset):
    c = dataset.collection
    assert len(c.globals) >= 200
    assert len(c.locals) >= 50
    assert len(dataset.pairs) >= 50
    assert len({q for q, _ in dataset.pairs}) >= 50


def test_deterministic(dataset):
    again = generate(SynthConfig())
    a, b = dataset.collection, again.collection
    assert dataset.pairs == again.pairs
    assert all(np.array_equal(x.points, y.points) for x, y in zip(a.globals, b.globals))
    assert np.array_equal(a.dictionary.points, b.dictionary.points)


def test_pairs_satisfy_relevance(dataset):
    ann = dataset.collection.annotations
    for q, g in dataset.pairs:
        assert np.hypot(*np.subtract(ann[q].pose, ann[g].pose)) <= 5.0
        assert abs(ann[q].travel - ann[g].travel) >= 30.0


def test_ground_truth_alignment_overlaps(dataset):
    # annotations hold world centroids, so the true relative shift is recoverable
    c = dataset.collection
    by = c.by_id()
    fracs = []
    for q, g in dataset.pairs[::25]:
        sq = np.subtract(c.annotations[q].pose, by[q].centroid)
        sg = np.subtract(c.annotations[g].pose, by[g].centroid)
        t = RigidTransform2(0.0, *(sq - sg))
        fracs.append(inlier_count(by[q].points, t, rasterize(by[g], 0.1)) / len(by[q]))
    assert np.median(fracs) > 0.3


def test_maps_live_in_local_frames(dataset):
    for m in dataset.collection.globals[:20]:
        lo = m.points.min(axis=0)
        assert np.all(np.abs(lo) <= 5.0 + 1e-9)


def test_ring_cells_cover_border():
    cells = ring_cells(5, 4)
    assert len(cells) == 14 and len(set(cells)) == 14
    assert all(i in (0, 4) or j in (0, 3) for i, j in cells)


def test_loop_path_travel_and_closure():
    poses, travel = loop_path([(0, 0), (10, 0), (10, 10), (0, 10)], 2, 0.5)
    assert travel[-1] < 80.0 and np.allclose(np.diff(travel), 0.5)
    assert np.allclose(poses[0], poses[80])


def test_sample_walls_spacing():
    pts = sample_walls(np.array([[0.0, 0.0, 10.0, 0.0]]), 0.1, 0.0, np.random.default_rng(0))
    assert len(pts) == 100 and np.allclose(pts[:, 1], 0.0)
