import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afford2d import geometry as geo
from afford2d.errors import ContractViolation


def unit_square():
    return geo.BoundaryShape().add_polyline(
        [(0, 0), (1, 0), (1, 1), (0, 1)], label="side", closed=True
    )


# ---------------------------------------------------------------------------
# sample_boundary


def test_square_four_points_one_per_side():
    shape = unit_square()
    cloud = geo.sample_boundary(shape, 4, seed=0)
    # Stratified: each unit-length stratum is one side.
    sides = set()
    for p in cloud.points:
        if p[1] == 0:
            sides.add("bottom")
        elif p[0] == 1:
            sides.add("right")
        elif p[1] == 1:
            sides.add("top")
        else:
            sides.add("left")
    assert len(sides) == 4


def test_single_segment_all_points_within_length():
    shape = geo.BoundaryShape().add((0, 0), (2.0, 0), "seg")
    cloud = geo.sample_boundary(shape, 100, seed=3)
    assert len(cloud) == 100
    assert np.all(cloud.points[:, 1] == 0)
    d = np.ptp(cloud.points[:, 0])
    assert d <= 2.0
    assert cloud.labels == ["seg"] * 100


def test_l_shape_counts_match_length_proportion():
    # Multinomial oracle: expected count n*p, sigma = sqrt(n p (1-p)).
    shape = geo.BoundaryShape().add((0, 0), (3.0, 0), "long").add((3.0, 0), (3.0, 1.0), "short")
    n = 1000
    cloud = geo.sample_boundary(shape, n, seed=11)
    count_long = sum(1 for l in cloud.labels if l == "long")
    p = 3.0 / 4.0
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(count_long - n * p) <= 3 * sigma


def test_sample_reproducible_per_seed():
    shape = unit_square()
    c1 = geo.sample_boundary(shape, 64, seed=42)
    c2 = geo.sample_boundary(shape, 64, seed=42)
    assert np.array_equal(c1.points, c2.points)
    assert c1.labels == c2.labels
    c3 = geo.sample_boundary(shape, 64, seed=43)
    assert not np.array_equal(c1.points, c3.points)


def test_sample_degenerate_raises():
    with pytest.raises(ContractViolation):
        geo.sample_boundary(geo.BoundaryShape(), 4, seed=0)
    with pytest.raises(ContractViolation):
        geo.BoundaryShape().add((0, 0), (0, 0), "x")


# ---------------------------------------------------------------------------
# transforms


def test_identity_transform_unchanged():
    cloud = geo.sample_boundary(unit_square(), 16, seed=1)
    moved = geo.to_world(cloud, geo.IDENTITY)
    assert np.array_equal(moved.points, cloud.points)


def test_pure_translation_shifts_coordinates():
    tf = geo.RigidTransform(0.0, (2.0, -1.5))
    p = np.array([[0.5, 0.25]])
    out = tf.apply(p)
    np.testing.assert_allclose(out, [[2.5, -1.25]], atol=1e-15)


def test_rotation_round_trip_within_tolerance():
    tf = geo.RigidTransform(math.pi / 2, (0.3, -0.7))
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(50, 2))
    back = tf.inverse().apply(tf.apply(pts))
    assert np.max(np.abs(back - pts)) < 1e-12


def test_to_local_inverts_to_world():
    tf = geo.RigidTransform(0.83, (1.0, 2.0))
    p = np.array([0.2, -0.4])
    w = tf.apply(p)
    back = geo.to_local(w, tf)
    assert np.max(np.abs(back - p)) < 1e-12


def test_compose_matches_sequential_application():
    a = geo.RigidTransform(0.4, (1.0, 0.0))
    b = geo.RigidTransform(-1.1, (0.2, 0.5))
    p = np.array([[0.3, 0.9]])
    np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-14)


# ---------------------------------------------------------------------------
# count_in_ball


def test_count_in_ball_empty():
    assert geo.count_in_ball(np.zeros((0, 2)), (0, 0), 1.0) == 0


def test_count_in_ball_coincident_point():
    pts = np.array([[0.5, 0.5], [2.0, 2.0]])
    assert geo.count_in_ball(pts, (0.5, 0.5), 0.01) == 1


def test_count_in_ball_strict_inequality():
    pts = np.array([[1.0, 0.0]])
    assert geo.count_in_ball(pts, (0, 0), 1.0) == 0
    assert geo.count_in_ball(pts, (0, 0), 1.0 + 1e-12) == 1


def test_count_in_ball_nonpositive_radius_raises():
    with pytest.raises(ContractViolation):
        geo.count_in_ball(np.zeros((1, 2)), (0, 0), 0.0)


def test_count_in_ball_matches_linear_scan():
    rng = np.random.default_rng(17)
    pts = rng.uniform(-1, 1, size=(100, 2))
    for _ in range(50):
        center = rng.uniform(-1, 1, size=2)
        r = rng.uniform(0.05, 1.0)
        expected = 0
        for q in pts:
            if np.hypot(q[0] - center[0], q[1] - center[1]) < r:
                expected += 1
        assert geo.count_in_ball(pts, center, r) == expected


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_distance_invariant_under_rigid_transform(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(30, 2))
    center = rng.uniform(-1, 1, size=2)
    r = float(rng.uniform(0.1, 1.5))
    tf = geo.RigidTransform(float(rng.uniform(-math.pi, math.pi)),
                            tuple(rng.uniform(-2, 2, size=2)))
    before = geo.count_in_ball(pts, center, r)
    after = geo.count_in_ball(tf.apply(pts), tf.apply(center), r + 1e-9)
    after_lo = geo.count_in_ball(tf.apply(pts), tf.apply(center), r - 1e-9)
    # rotation introduces sub-ulp distance noise; bracket with a hair of slack
    assert after_lo <= before <= after


# ---------------------------------------------------------------------------
# cloud line format


def test_cloud_lines_round_trip():
    cloud = geo.PointCloud(np.array([[0.125, -3.5], [1.0, 2.0]]), ["handle", "panel"])
    scores = np.array([[0.25, 0.0], [0.5, 1.0]])
    text = geo.cloud_lines(cloud, scores)
    assert text.splitlines()[0] == "0.125 -3.5 handle 0.25 0.0"
    parsed, sc = geo.parse_cloud_lines(text)
    assert np.array_equal(parsed.points, cloud.points)
    assert parsed.labels == cloud.labels
    assert np.array_equal(sc, scores)


def test_parse_cloud_lines_reports_line_number():
    with pytest.raises(ContractViolation, match="line 2"):
        geo.parse_cloud_lines("0 0 ok\n0 bad\n")


def test_segments_intersect():
    assert geo.segments_intersect((0, 0), (1, 1), (0, 1), (1, 0))
    assert not geo.segments_intersect((0, 0), (1, 0), (0, 1), (1, 1))
    assert geo.segments_intersect((0, 0), (1, 0), (0.5, 0), (0.5, 1))
