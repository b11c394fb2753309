import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partmatch.errors import InvalidArgument
from partmatch.geometry import (
    BBox,
    OccupancyGrid,
    Point2,
    PointSetMap,
    RigidTransform2,
    apply_transform,
    bbox_overlap,
    inlier_count,
    overlap_area,
    rasterize,
    rotate_points,
    transform_points,
)

coord = st.floats(-1e3, 1e3, allow_nan=False)
angle = st.floats(-10, 10, allow_nan=False)


def complex_oracle(t, p):
    z = complex(p[0], p[1]) * cmath.exp(1j * t.rotation) + complex(t.tx, t.ty)
    return z.real, z.imag


def test_identity_transform():
    assert apply_transform(RigidTransform2(), Point2(3.0, -2.0)) == (3.0, -2.0)


def test_quarter_turn():
    p = apply_transform(RigidTransform2(math.pi / 2, 0, 0), Point2(1.0, 0.0))
    assert p == pytest.approx((0.0, 1.0), abs=1e-15)


def test_half_turn_with_translation():
    t = RigidTransform2(math.pi, 1.0, 1.0)
    p = apply_transform(t, Point2(2.0, 0.0))
    assert p == pytest.approx((-1.0, 1.0), abs=1e-12)
    assert p == pytest.approx(complex_oracle(t, (2.0, 0.0)), abs=1e-12)


@given(angle, coord, coord, coord, coord)
def test_transform_matches_complex_oracle(theta, tx, ty, x, y):
    t = RigidTransform2(theta, tx, ty)
    assert apply_transform(t, Point2(x, y)) == pytest.approx(complex_oracle(t, (x, y)), abs=1e-9)


@given(angle, coord, coord, coord, coord)
def test_inverse_round_trip(theta, tx, ty, x, y):
    t = RigidTransform2(theta, tx, ty)
    back = apply_transform(t.inverse(), apply_transform(t, Point2(x, y)))
    assert back == pytest.approx((x, y), abs=1e-9)


@given(angle, angle, coord, coord)
def test_compose_applies_right_first(a, b, x, y):
    t1 = RigidTransform2(a, 1.5, -2.0)
    t2 = RigidTransform2(b, -0.5, 3.0)
    lhs = apply_transform(t2.compose(t1), Point2(x, y))
    rhs = apply_transform(t2, apply_transform(t1, Point2(x, y)))
    assert lhs == pytest.approx(rhs, abs=1e-9)


@settings(max_examples=50)
@given(angle, st.lists(st.tuples(coord, coord), min_size=2, max_size=20))
def test_rotation_preserves_distances(theta, pts):
    arr = np.array(pts)
    rot = rotate_points(theta, arr)
    d0 = np.linalg.norm(arr[:, None] - arr[None], axis=-1)
    d1 = np.linalg.norm(rot[:, None] - rot[None], axis=-1)
    assert np.allclose(d0, d1, atol=1e-9)


def test_manhattan_rotations_are_exact():
    pts = np.array([[0.1, 0.3], [-2.7, 5.5]])
    assert np.array_equal(rotate_points(math.pi, rotate_points(math.pi, pts)), pts)
    assert np.array_equal(rotate_points(math.pi / 2, pts), np.stack([-pts[:, 1], pts[:, 0]], axis=1))


def test_rasterize_single_point():
    g = rasterize(PointSetMap("a", [[0.05, 0.05]]), 0.1)
    assert g.occupied_count == 1
    # one empty cell of padding on each side
    assert (g.width, g.height) == (3, 3)


def test_rasterize_same_cell():
    g = rasterize(PointSetMap("a", [[0.01, 0.01], [0.09, 0.02]]), 0.1)
    assert g.occupied_count == 1


def test_rasterize_bad_resolution():
    with pytest.raises(InvalidArgument):
        rasterize(PointSetMap("a", [[0, 0]]), 0.0)


def test_rasterize_counts_distinct_quantized_pairs():
    rng = np.random.default_rng(7)
    for _ in range(20):
        pts = rng.uniform(-3, 3, (100, 2))
        expected = {(math.floor(x / 0.1), math.floor(y / 0.1)) for x, y in pts}
        assert rasterize(PointSetMap("r", pts), 0.1).occupied_count == len(expected)


def test_cell_membership_half_open():
    g = rasterize(PointSetMap("a", [[0.0, 0.0], [1.0, 1.0]]), 0.5)
    ix, iy = g.cell_index([[0.5, 0.5], [0.4999, 0.4999]])
    assert ix[0] == ix[1] + 1 and iy[0] == iy[1] + 1


def test_grid_origin_independent_of_point_order():
    pts = np.random.default_rng(0).uniform(0, 5, (50, 2))
    a = rasterize(PointSetMap("a", pts))
    b = rasterize(PointSetMap("b", pts[::-1]))
    assert (a.ix0, a.iy0) == (b.ix0, b.iy0)
    assert np.array_equal(a.occupied, b.occupied)


@settings(max_examples=50)
@given(st.lists(st.tuples(coord, coord), min_size=1, max_size=40), st.sampled_from([0.05, 0.1, 0.37, 1.0]))
def test_self_inliers_are_all_points(pts, res):
    m = PointSetMap("m", pts)
    assert inlier_count(m.points, RigidTransform2(), rasterize(m, res)) == len(m)


def test_inliers_outside_grid_are_zero():
    m = PointSetMap("m", [[0, 0], [1, 1]])
    assert inlier_count(m.points, RigidTransform2(0, 100, 100), rasterize(m)) == 0


def test_inliers_on_hand_built_grid():
    occ = np.zeros((4, 4), dtype=bool)
    occ[0, 0] = occ[2, 3] = True
    g = OccupancyGrid(0, 0, 1.0, occ)
    pts = [[0.5, 0.5], [2.2, 3.9], [1.5, 1.5]]
    assert inlier_count(pts, RigidTransform2(), g) == 2


def test_overlap_examples():
    a = BBox(0, 2, 0, 1)
    b = BBox(1, 3, 0, 1)
    assert bbox_overlap(a, b) == BBox(1, 2, 0, 1)
    assert overlap_area(a, b) == 1.0
    assert bbox_overlap(a, a) == a
    assert bbox_overlap(a, BBox(5, 6, 5, 6)) is None
    assert overlap_area(a, BBox(5, 6, 5, 6)) == 0.0


box = st.tuples(coord, st.floats(0, 100), coord, st.floats(0, 100)).map(lambda t: BBox(t[0], t[0] + t[1], t[2], t[2] + t[3]))


@given(box, box)
def test_overlap_commutative_and_bounded(a, b):
    assert overlap_area(a, b) == overlap_area(b, a)
    assert overlap_area(a, b) <= min(a.area, b.area) + 1e-9


def test_bbox_validation():
    with pytest.raises(InvalidArgument):
        BBox(1, 0, 0, 1)
    with pytest.raises(InvalidArgument):
        BBox(0, float("nan"), 0, 1)


def test_map_validation_and_extent():
    with pytest.raises(InvalidArgument):
        PointSetMap("", [[0, 0]])
    with pytest.raises(InvalidArgument):
        PointSetMap("x", np.empty((0, 2)))
    m = PointSetMap("x", [[0, 1], [2, -1]])
    assert m.extent == BBox(0, 2, -1, 1)
    assert m.centroid == (1.0, 0.0)
    with pytest.raises(ValueError):
        m.points[0, 0] = 5.0


def test_transform_points_matches_scalar():
    t = RigidTransform2(0.3, 1.0, -2.0)
    pts = np.array([[1.0, 2.0], [-3.0, 0.5]])
    out = transform_points(t, pts)
    for p, q in zip(pts, out):
        assert tuple(q) == pytest.approx(apply_transform(t, Point2(*p)), abs=1e-12)
