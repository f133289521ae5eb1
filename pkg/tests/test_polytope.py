import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cross_polytope_volume, enumerate_vertices
from probscale.errors import EmptySetError, UnboundedError
from probscale.polytope import (
    CenteredPolytope,
    HPolytope,
    SupportOracle,
    bounding_box,
    chebyshev_center,
    mc_volume,
    scale_about,
    support,
    support_point,
)
from probscale.uncertainty import SampleStream

SQUARE = HPolytope.box([-1.0, -1.0], [1.0, 1.0])


def random_poly(rng, n=3, m=8):
    A = np.vstack([rng.normal(size=(m, n)), np.eye(n), -np.eye(n)])
    b = np.concatenate([rng.uniform(0.5, 2.0, m), rng.uniform(1.0, 3.0, 2 * n)])
    return HPolytope(A, b)


def test_zero_rows_handled():
    P = HPolytope([[0.0, 0.0], [1.0, 0.0]], [1.0, 2.0])
    assert P.n_rows == 1 and P.n_input_rows == 2 and not P.trivially_empty
    E = HPolytope([[0.0, 0.0], [1.0, 0.0]], [-1.0, 2.0])
    assert E.trivially_empty
    assert not E.contains([0.0, 0.0])
    with pytest.raises(EmptySetError):
        support(E, [1.0, 0.0])
    with pytest.raises(ValueError):
        HPolytope(np.zeros((0, 2)), np.zeros(0))


def test_support_examples():
    assert support(SQUARE, [1.0, 1.0]) == pytest.approx(2.0)
    assert support(HPolytope([[1.0, 0.0]], [1.0]), [0.0, 1.0]) == np.inf
    empty = HPolytope([[1.0], [-1.0]], [-1.0, -1.0])
    with pytest.raises(EmptySetError):
        support(empty, [1.0])


@pytest.mark.parametrize("seed", range(15))
def test_support_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    P = random_poly(rng)
    V = enumerate_vertices(P.A, P.b)
    oracle = SupportOracle(P)
    for _ in range(5):
        f = rng.normal(size=3)
        ref = (V @ f).max()
        assert abs(support(P, f) - ref) <= 1e-8 * max(1.0, abs(ref))
        assert abs(oracle(f) - ref) <= 1e-8 * max(1.0, abs(ref))
        x = support_point(P, f)
        assert f @ x == pytest.approx(ref, abs=1e-8)


def test_support_point_unbounded():
    with pytest.raises(UnboundedError):
        support_point(HPolytope([[1.0, 0.0]], [1.0]), [0.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 50.0))
def test_support_homogeneous_and_sublinear(seed, t):
    rng = np.random.default_rng(seed)
    P = random_poly(rng)
    f, g = rng.normal(size=(2, 3))
    sf, sg = support(P, f), support(P, g)
    assert support(P, t * f) == pytest.approx(t * sf, rel=1e-8, abs=1e-8)
    assert support(P, f + g) <= sf + sg + 1e-8


def test_chebyshev_square():
    c, r = chebyshev_center(SQUARE)
    np.testing.assert_allclose(c, [0.0, 0.0], atol=1e-9)
    assert r == pytest.approx(1.0)


def test_chebyshev_triangle():
    tri = HPolytope([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])
    c, r = chebyshev_center(tri)
    want = 1.0 / (2.0 + np.sqrt(2.0))
    assert r == pytest.approx(want, abs=1e-9)
    np.testing.assert_allclose(c, [want, want], atol=1e-9)


def test_chebyshev_errors():
    with pytest.raises(UnboundedError):
        chebyshev_center(HPolytope([[1.0, 0.0]], [1.0]))
    with pytest.raises(EmptySetError):
        chebyshev_center(HPolytope([[1.0], [-1.0]], [-1.0, -1.0]))


@pytest.mark.parametrize("seed", range(10))
def test_chebyshev_ball_inside(seed):
    P = random_poly(np.random.default_rng(50 + seed))
    c, r = chebyshev_center(P)
    assert r > 0
    slack = P.b - P.A @ c - r * np.linalg.norm(P.A, axis=1)
    assert slack.min() >= -1e-9


def test_centered_polytope_requires_interior_center():
    CenteredPolytope(SQUARE, [0.0, 0.0])
    with pytest.raises(EmptySetError):
        CenteredPolytope(SQUARE, [1.0, 0.0])


def test_scale_about_examples():
    cp = CenteredPolytope(SQUARE, [0.5, 0.0])
    one = scale_about(cp, 1.0)
    np.testing.assert_array_equal(one.A, SQUARE.A)
    np.testing.assert_allclose(one.b, SQUARE.b)
    zero = scale_about(cp, 0.0)
    np.testing.assert_allclose(zero.b, SQUARE.A @ cp.center)
    assert zero.contains(cp.center)
    assert not zero.contains(cp.center + [1e-6, 0.0])
    with pytest.raises(ValueError):
        scale_about(cp, -0.1)


def test_scale_about_matches_affine_map():
    cp = CenteredPolytope(SQUARE, [0.5, 0.0])
    half = scale_about(cp, 0.5)
    pts = np.random.default_rng(0).uniform(-2, 2, size=(10_000, 2))
    # y in scaled set iff the preimage center + (y - center) / gamma is in the square
    pre = cp.center + (pts - cp.center) / 0.5
    np.testing.assert_array_equal(half.contains(pts), SQUARE.contains(pre))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_scale_about_nesting(seed, g1, g2):
    g1, g2 = sorted((g1, g2))
    rng = np.random.default_rng(seed)
    P = random_poly(rng)
    c, _ = chebyshev_center(P)
    cp = CenteredPolytope(P, c)
    pts = rng.uniform(-4, 4, size=(2000, 3))
    small = scale_about(cp, g1).contains(pts, tol=-1e-9)
    big = scale_about(cp, g2).contains(pts, tol=1e-9)
    assert np.all(big[small])


def test_bounding_box():
    lo, hi = bounding_box(HPolytope.box([0.0, -1.0], [2.0, 4.0]))
    np.testing.assert_allclose(lo, [0.0, -1.0])
    np.testing.assert_allclose(hi, [2.0, 4.0])
    with pytest.raises(UnboundedError):
        bounding_box(HPolytope([[1.0, 0.0]], [1.0]))


def test_mc_volume_square():
    est, se = mc_volume(SQUARE.contains, ([-2, -2], [2, 2]), 100_000, SampleStream(0))
    assert abs(est - 4.0) <= 3 * se


def test_mc_volume_empty():
    empty = HPolytope([[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0])
    est, se = mc_volume(empty.contains, ([-2, -2], [2, 2]), 1000, SampleStream(0))
    assert est == 0.0 and se == 0.0
    with pytest.raises(ValueError):
        mc_volume(SQUARE.contains, ([-2, -2], [2, 2]), 99, SampleStream(0))


def test_mc_volume_cross_polytope():
    n = 3
    est, se = mc_volume(lambda x: np.abs(x).sum(axis=1) <= 1.0, (-np.ones(n), np.ones(n)),
                        200_000, SampleStream(1))
    assert abs(est - cross_polytope_volume(n)) <= 3 * se
    assert cross_polytope_volume(3) == pytest.approx(8 / 6)


def test_serialization_roundtrip():
    P = random_poly(np.random.default_rng(2))
    again = HPolytope.from_dict(json.loads(P.to_json()))
    np.testing.assert_array_equal(again.A, P.A)
    np.testing.assert_array_equal(again.b, P.b)
    lines = P.to_csv().strip().split("\n")
    assert lines[0] == "a1,a2,a3,b"
    assert len(lines) == P.n_rows + 1
    np.testing.assert_array_equal(np.array([l.split(",") for l in lines[1:]], dtype=float),
                                  np.hstack([P.A, P.b[:, None]]))


def test_intersect_keeps_emptiness():
    empty = HPolytope([[0.0, 0.0]], [-1.0])
    assert SQUARE.intersect(empty).trivially_empty
    both = SQUARE.intersect(HPolytope([[1.0, 1.0]], [0.0]))
    assert both.n_rows == 5
    assert support(both, [1.0, 1.0]) == pytest.approx(0.0, abs=1e-9)
