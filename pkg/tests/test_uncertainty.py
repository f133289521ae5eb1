import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probscale.uncertainty import (
    AffineInQ,
    CallbackSystem,
    DistributionSpec,
    GaussianVector,
    ProductForm,
    SampleStream,
    ScalarUniformFactor,
    UniformBox,
    draw,
    realize_scenarios,
    violation_indicator,
    violation_matrix,
)


def illustrating_spec(cov=None):
    cov = np.eye(3) if cov is None else cov
    return DistributionSpec((ScalarUniformFactor(0.5, 1.5, 1), GaussianVector([0, 0, 0], cov)))


def test_degenerate_uniform_gives_zeros():
    spec = DistributionSpec((UniformBox([0.0], [0.0]),))
    for seed in (0, 7, 2**40):
        np.testing.assert_array_equal(draw(spec, SampleStream(seed), 5), np.zeros((5, 1)))


def test_gaussian_mean_clt():
    spec = DistributionSpec((GaussianVector([0, 0], np.eye(2)),))
    Q = draw(spec, SampleStream(11), 100_000)
    assert np.all(np.abs(Q.mean(axis=0)) <= 3 / np.sqrt(1e5))
    np.testing.assert_allclose(np.cov(Q.T), np.eye(2), atol=0.02)


def test_gaussian_covariance_reproduced():
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    Q = draw(DistributionSpec((GaussianVector([1.0, -1.0], cov),)), SampleStream(3), 200_000)
    np.testing.assert_allclose(Q.mean(axis=0), [1.0, -1.0], atol=0.01)
    np.testing.assert_allclose(np.cov(Q.T), cov, atol=0.02)


def test_factor_times_gaussian():
    spec = illustrating_spec()
    Q = draw(spec, SampleStream(5), 50_000)
    q1 = Q[:, 0]
    assert q1.min() >= 0.5 and q1.max() <= 1.5
    sd = q1.std() / np.sqrt(q1.size)
    assert abs(q1.mean() - 1.0) <= 3 * sd
    E = spec.effective(Q)
    assert E.shape == (50_000, 3)
    np.testing.assert_allclose(E, Q[:, :1] * Q[:, 1:])


def test_effective_mean():
    spec = DistributionSpec((ScalarUniformFactor(1.0, 3.0, 1), UniformBox([1.0, -1.0], [3.0, 1.0])))
    np.testing.assert_allclose(spec.effective_mean(), [4.0, 0.0])
    np.testing.assert_allclose(spec.mean(), [2.0, 2.0, 0.0])


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        GaussianVector([0, 0], [[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(ValueError):
        GaussianVector([0, 0], [[1.0, 0.1], [0.0, 1.0]])  # asymmetric
    with pytest.raises(ValueError):
        UniformBox([1.0], [0.0])
    with pytest.raises(ValueError):
        ScalarUniformFactor(0.0, np.inf, 1)
    with pytest.raises(ValueError):
        DistributionSpec((ScalarUniformFactor(0, 1, 0),))
    with pytest.raises(ValueError):
        draw(illustrating_spec(), SampleStream(0), 0)


def test_spec_roundtrip():
    spec = illustrating_spec(np.diag([1.0, 2.0, 3.0]))
    again = DistributionSpec.from_dict(spec.to_dict())
    Q1 = draw(spec, SampleStream(1), 10)
    Q2 = draw(again, SampleStream(1), 10)
    assert Q1.tobytes() == Q2.tobytes()


def test_repeated_spec_shifts_factor_targets():
    spec = illustrating_spec()
    rep = spec.repeated(3)
    assert rep.dim == 12 and rep.effective_dim == 9
    Q = draw(rep, SampleStream(2), 4)
    E = rep.effective(Q)
    for t in range(3):
        np.testing.assert_allclose(E[:, 3 * t:3 * t + 3], Q[:, 4 * t:4 * t + 1] * Q[:, 4 * t + 1:4 * t + 4])


# ---------------------------------------------------------------------------
# streams


def test_stream_reproducible_bytes():
    spec = illustrating_spec()
    a = draw(spec, SampleStream(123).child("x", 4), 50)
    b = draw(spec, SampleStream(123).child("x", 4), 50)
    assert a.tobytes() == b.tobytes()


def test_stream_random_access():
    s = SampleStream(9).child("scaling")
    full = s.uniforms(0, 100, 7)
    np.testing.assert_array_equal(s.uniforms(37, 20, 7), full[37:57])


def test_stream_prefix_consistent_across_counts():
    spec = illustrating_spec()
    s = SampleStream(4)
    np.testing.assert_array_equal(draw(spec, s, 10), draw(spec, s, 1000)[:10])


def test_substreams_uncorrelated():
    N = 20_000
    a = SampleStream(1).child("a").uniforms(0, N, 1)[:, 0]
    b = SampleStream(1).child("b").uniforms(0, N, 1)[:, 0]
    c = SampleStream(2).child("a").uniforms(0, N, 1)[:, 0]
    for u, v in ((a, b), (a, c), (b, c)):
        assert abs(np.corrcoef(u, v)[0, 1]) <= 4 / np.sqrt(N)


def test_uniforms_open_interval():
    u = SampleStream(0).uniforms(0, 100_000, 3)
    assert u.min() > 0.0 and u.max() < 1.0


# ---------------------------------------------------------------------------
# systems and scenarios


def test_zero_variance_gives_identical_scenarios():
    spec = DistributionSpec((UniformBox([1.0, 2.0], [1.0, 2.0]),))
    scen = realize_scenarios(ProductForm(spec, 2), spec, SampleStream(0), 6)
    assert scen.N == 6
    for i in range(6):
        np.testing.assert_array_equal(scen.F[i], scen.F[0])
        np.testing.assert_array_equal(scen.g[i], scen.g[0])


def test_product_form_fixed_direction():
    spec = DistributionSpec((ScalarUniformFactor(0.5, 1.5, 1), UniformBox([1.0, 0.0, 0.0], [1.0, 0.0, 0.0])))
    sys = ProductForm(spec, 3)
    stream = SampleStream(8)
    scen = realize_scenarios(sys, spec, stream, 20)
    Q = draw(spec, stream, 20)
    np.testing.assert_allclose(scen.F[:, 0, :], Q[:, :1] * np.array([1.0, 0.0, 0.0]))
    np.testing.assert_array_equal(scen.g, 1.0)


def test_realize_scenarios_rejects_empty():
    spec = illustrating_spec()
    with pytest.raises(ValueError):
        realize_scenarios(ProductForm(spec, 3), spec, SampleStream(0), 0)


def test_affine_system():
    F0 = np.array([[1.0, 0.0], [0.0, 1.0]])
    g0 = np.array([1.0, 2.0])
    Ft = np.array([[[1.0, 1.0], [0.0, 0.0]]])
    gt = np.array([[0.5, 0.0]])
    sys = AffineInQ(F0, g0, Ft, gt)
    F, g = sys.realize([2.0])
    np.testing.assert_allclose(F, [[3.0, 2.0], [0.0, 1.0]])
    np.testing.assert_allclose(g, [2.0, 2.0])


def test_callback_dimension_check():
    bad = CallbackSystem(2, 1, lambda Q: (np.zeros((len(Q), 2, 2)), np.zeros((len(Q), 2))))
    with pytest.raises(ValueError):
        bad.realize_batch(np.zeros((3, 1)))


def test_violation_indicator_trivial_cases():
    spec = illustrating_spec()
    sys = ProductForm(spec, 3)
    q = draw(spec, SampleStream(0), 1)[0]
    assert violation_indicator(sys, np.zeros(3), q) == 0
    row = AffineInQ([[1.0, 0.0]], [1.0])
    assert violation_indicator(row, [2.0, 0.0], np.zeros(0)) == 1
    assert violation_indicator(row, [1.0, 0.0], np.zeros(0)) == 0


def test_violation_indicator_equals_max_of_row_indicators():
    rng = np.random.default_rng(0)
    spec = DistributionSpec((GaussianVector(np.zeros(12), np.eye(12)),))
    sys = ProductForm(spec, 3, rhs=1.0)  # p = 4 rows
    Q = draw(spec, SampleStream(1), 10_000)
    xi = rng.normal(size=(10_000, 3))
    F, g = sys.realize_batch(Q)
    h = (np.einsum("npj,nj->np", F, xi) > g).astype(int)
    by_max = h.max(axis=1)
    by_product = 1 - np.prod(1 - h, axis=1)
    got = np.array([violation_indicator(sys, xi[i], Q[i]) for i in range(10_000)])
    np.testing.assert_array_equal(got, by_max)
    np.testing.assert_array_equal(got, by_product)


def test_violation_matrix_matches_indicator():
    spec = illustrating_spec()
    sys = ProductForm(spec, 3)
    Q = draw(spec, SampleStream(2), 200)
    pts = np.random.default_rng(1).normal(size=(5, 3))
    V = violation_matrix(sys, pts, Q)
    for k in range(5):
        for i in range(0, 200, 17):
            assert V[k, i] == bool(violation_indicator(sys, pts[k], Q[i]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 10_000), st.integers(1, 9))
def test_draw_pure_function_of_seed_and_index(seed, start, width):
    s = SampleStream(seed)
    a = s.uniforms(start, 3, width)
    b = SampleStream(seed).uniforms(start, 3, width)
    assert a.tobytes() == b.tobytes()
    # sample start + 1 does not depend on which batch it was drawn in
    np.testing.assert_array_equal(s.uniforms(start + 1, 1, width)[0], a[1])
