import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kronattn import matvar as mv
from kronattn.tensor import ShapeError, outer_sum
from kronattn.verify import monte_carlo_moments, random_model, trace_sweep

N = 100_000
positive = st.floats(0.05, 5.0)


def model(mu, ups, om, ps):
    return mv.MatrixNormalKS(np.array(mu, float), np.array(ups, float), np.array(om, float), np.array(ps, float))


def test_vanishing_noise_sample_is_mean():
    d = model([0, 1, 2], [3, -1], [1e-12] * 3, [1e-12] * 2)
    np.testing.assert_allclose(mv.sample(d, 0), outer_sum(d.mu, d.upsilon), atol=1e-4)


def test_sample_deterministic():
    d = model([0, 1], [0, 2], [1, 1], [1, 1])
    np.testing.assert_array_equal(mv.sample(d, 5), mv.sample(d, 5))
    assert not np.array_equal(mv.sample(d, 5), mv.sample(d, 6))


def test_sample_moments_small_case():
    d = model([0, 1], [0, 2], [1, 1], [1, 1])
    x = mv.sample_many(d, N, seed=1)
    se = np.sqrt(d.entry_variance / N)
    assert np.all(np.abs(x.mean(axis=0) - [[0, 2], [1, 3]]) < 3 * se)
    np.testing.assert_allclose(x.var(axis=0, ddof=1), 2.0, rtol=0.05)


def test_entries_independent():
    d = model([0, 0], [0, 0], [1, 2], [0.5, 1])
    x = mv.sample_many(d, N, seed=3).reshape(N, -1)
    cov = np.cov(x, rowvar=False)
    np.testing.assert_allclose(cov, d.covariance(), atol=0.03)


def test_row_marginal_example():
    spec = mv.row_average_marginal(model([0, 0], [1, 2], [1, 1], [1, 1]))
    np.testing.assert_allclose(spec.mean, [1, 2])
    np.testing.assert_allclose(spec.cov_diag, [1, 1])
    assert spec.axis == "row"


def test_symmetric_marginals():
    sigma2, h = 0.7, 4
    d = model([0] * h, [0] * h, [sigma2] * h, [sigma2] * h)
    for spec in (mv.row_average_marginal(d), mv.col_average_marginal(d)):
        np.testing.assert_allclose(spec.cov_diag, 2 * sigma2 / h)


def test_col_marginal_formula():
    d = model([1, 2, 3], [4, 6], [0.5, 1, 1.5], [2, 4])
    spec = mv.col_average_marginal(d)
    np.testing.assert_allclose(spec.mean, 5 + np.array([1, 2, 3]))
    np.testing.assert_allclose(spec.cov_diag, (3 + np.array([0.5, 1, 1.5])) / 2)


def test_monte_carlo_marginals_and_reconstruction():
    d = model([0.5, -1, 2], [1, 0, -0.5, 3], [0.3, 1.2, 0.8], [1.5, 0.4, 0.9, 0.2])
    for check in monte_carlo_moments(d, N, seed=11):
        assert check.passed(3.0, 0.05), check


def test_reconstruct_constant_inputs():
    a, b = np.array([1.0, 2.0, 3.0]), np.array([10.0, 20.0])
    rows = np.tile(a, (2, 1))  # h=2 rows, each r_k = a (w=3)
    cols = np.tile(b, (3, 1))  # w=3 columns, each c_k = b (h=2)
    np.testing.assert_array_equal(mv.reconstruct(rows, cols), outer_sum(b, a))


def test_reconstruct_shape_error():
    with pytest.raises(ShapeError):
        mv.reconstruct(np.zeros((2, 3)), np.zeros((2, 3)))


def test_reconstruction_law_formula():
    d = model([1, 2], [3, 4, 5], [1, 3], [2, 2, 5])
    rec = mv.reconstruction_distribution(d)
    np.testing.assert_allclose(rec.mean, outer_sum(d.mu, d.upsilon) + 1.5 + 4)
    var = (3 + np.array([1, 3]))[:, None] / 3 + (2 + np.array([2, 2, 5]))[None, :] / 2
    np.testing.assert_allclose(rec.entry_variance, var)


def test_trace_identity_examples():
    lhs, rhs = mv.trace_identity_check(model([0] * 4, [0] * 4, [1, 2, 3, 4], [1] * 4))
    assert rhs == pytest.approx(28) and lhs == pytest.approx(28)
    for h in (2, 5, 9):
        lhs, rhs = mv.trace_identity_check(model([0] * h, [0] * h, [1] * h, [1] * h))
        assert lhs == pytest.approx(4 * h) and rhs == pytest.approx(4 * h)


def test_trace_identity_requires_square():
    with pytest.raises(ValueError):
        mv.trace_identity_check(model([0, 0], [0, 0, 0], [1, 1], [1, 1, 1]))


def test_trace_sweep():
    for r in trace_sweep([2, 3, 5, 8], draws=20, seed=4):
        assert r.max_abs_diff < 1e-9


@given(st.integers(1, 8), st.data())
def test_trace_identity_property(h, data):
    om = data.draw(arrays(np.float64, h, elements=positive))
    ps = data.draw(arrays(np.float64, h, elements=positive))
    lhs, rhs = mv.trace_identity_check(model(np.zeros(h), np.zeros(h), om, ps))
    assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(rhs))


def test_normalize_mean():
    d = mv.normalize_mean(model([1, 1], [1, 1], [1, 1], [1, 1]))
    np.testing.assert_array_equal(d.mu, [0, 0])
    np.testing.assert_array_equal(d.upsilon, [0, 0])
    again = mv.normalize_mean(d)
    np.testing.assert_array_equal(again.mu, d.mu)
    np.testing.assert_array_equal(again.upsilon, d.upsilon)


def test_normalized_reconstruction_mean():
    d = mv.normalize_mean(model([1, 3, 2], [0, 5], [1, 1, 1], [1, 1]))
    rec = mv.reconstruct_many(d, N, seed=2)
    var = mv.reconstruction_distribution(d).entry_variance
    assert np.all(np.abs(rec.mean(axis=0) - outer_sum(d.mu, d.upsilon)) < 3 * np.sqrt(var / N))


def test_validation():
    with pytest.raises(ValueError):
        model([0], [0], [0], [1])
    with pytest.raises(ShapeError):
        mv.MatrixNormalKS(np.zeros(2), np.zeros(2), np.eye(2), np.ones(2))
    with pytest.raises(ShapeError):
        model([0, 0], [0], [1], [1])


def test_random_model_is_valid(rng):
    d = random_model(rng, 3, 4)
    assert (d.h, d.w) == (3, 4) and d.covariance().shape == (12, 12)


def test_mean_errors_are_standard_normal():
    """Over many batches the standardized mean errors have unit second moment."""
    d = model([0.5, -1, 2, 0], [1, 0, -0.5, 3], [0.3, 1.2, 0.8, 1], [1.5, 0.4, 0.9, 0.2])
    rec = mv.reconstruction_distribution(d)
    n, batches = 5_000, 40
    z = np.array([(mv.reconstruct_many(d, n, s).mean(axis=0) - rec.mean) / np.sqrt(rec.entry_variance / n)
                  for s in range(batches)])
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs((z ** 2).mean() - 1) < 4 * np.sqrt(2 / z.size)
