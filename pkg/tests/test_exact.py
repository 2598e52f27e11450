import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import asymptotic_variance_direct, enumerate_discrete
from smcstab.errors import DegeneracyError, RankError
from smcstab.exact import (
    exact_asymptotic_variance_discrete,
    exact_filter_variance_discrete,
    forward_filter_discrete,
    gaussian_brute_force_log_likelihood,
    gaussian_brute_force_posterior,
    kalman_filter,
    unnormalized_kernel_apply_discrete,
    variance_series_discrete,
)
from smcstab.models import DiscreteHmm, LinearGaussianModel

from conftest import random_discrete

seeds = st.integers(0, 2**32 - 1)


@given(seeds, st.integers(1, 3), st.integers(1, 3), st.integers(0, 6))
def test_forward_filter_matches_enumeration(seed, m, k, n):
    model, y = random_discrete(np.random.default_rng(seed), m, k, n)
    trace = forward_filter_discrete(model, y)
    pred, filt, lik = enumerate_discrete(model, y)
    np.testing.assert_allclose(trace.predictors, pred, atol=1e-10)
    np.testing.assert_allclose(trace.filters, filt, atol=1e-10)
    if n:
        assert math.exp(trace.log_likelihood) == pytest.approx(lik, rel=1e-10)
    else:
        assert trace.log_likelihood == 0.0


def test_long_record_does_not_underflow(two_state):
    y = np.tile([0, 1, 1, 0, 1], 4000)
    trace = forward_filter_discrete(two_state, y)
    assert np.isfinite(trace.log_likelihood) and trace.log_likelihood < -1e4


def test_zero_likelihood_raises():
    model = DiscreteHmm(q=[[1.0, 0.0], [0.0, 1.0]], g=[[1.0, 0.0], [0.0, 1.0]], chi=[1.0, 0.0])
    with pytest.raises(DegeneracyError) as info:
        forward_filter_discrete(model, [0, 0, 1])
    assert info.value.time == 2


@given(seeds, st.integers(0, 4), st.integers(0, 4))
def test_kernel_composition(seed, n1, n2):
    rng = np.random.default_rng(seed)
    model, y = random_discrete(rng, 3, 2, n1 + n2)
    h = rng.random(3)
    whole = unnormalized_kernel_apply_discrete(model, y, h)
    inner = unnormalized_kernel_apply_discrete(model, y[n1:], h)
    np.testing.assert_allclose(whole, unnormalized_kernel_apply_discrete(model, y[:n1], inner), rtol=1e-12)


def test_empty_segment_is_identity(two_state):
    h = np.array([0.3, -2.0])
    np.testing.assert_array_equal(unnormalized_kernel_apply_discrete(two_state, [], h), h)


@given(seeds, st.integers(2, 3), st.integers(0, 8))
def test_variance_routes_agree_with_direct_definition(seed, m, n):
    rng = np.random.default_rng(seed)
    model, y = random_discrete(rng, m, 2, n)
    h = (rng.random(m) < 0.5).astype(float)
    direct = asymptotic_variance_direct(model, y, h)
    assert exact_asymptotic_variance_discrete(model, y, h) == pytest.approx(direct, rel=1e-9, abs=1e-14)
    series = variance_series_discrete(model, y, h)
    assert series.sigma2[n] == pytest.approx(direct, rel=1e-9, abs=1e-14)


@given(seeds, st.integers(1, 8))
def test_filter_variance_series_matches_pointwise(seed, n):
    rng = np.random.default_rng(seed)
    model, y = random_discrete(rng, 3, 3, n)
    h = rng.random(3)
    series = variance_series_discrete(model, y, h)
    for t in range(n):
        assert series.sigma2_filter[t] == pytest.approx(exact_filter_variance_discrete(model, y[: t + 1], h), rel=1e-9, abs=1e-14)


@given(seeds, st.floats(0.01, 100.0))
def test_variance_invariant_to_scaling_likelihood(seed, c):
    rng = np.random.default_rng(seed)
    model, y = random_discrete(rng, 3, 2, 6)
    h = rng.random(3)
    # scaling g(., y) by a constant leaves every normalized quantity unchanged
    g2 = model.g.copy()
    g2[:, 0] *= c
    other = DiscreteHmm(q=model.q, g=g2, chi=model.chi)
    base = exact_asymptotic_variance_discrete(model, y, h)
    assert exact_asymptotic_variance_discrete(other, y, h) == pytest.approx(base, rel=1e-9, abs=1e-15)
    assert exact_filter_variance_discrete(other, y, h) == pytest.approx(exact_filter_variance_discrete(model, y, h), rel=1e-9, abs=1e-15)


def test_variance_is_constant_for_iid_states():
    row = np.array([0.3, 0.5, 0.2])
    model = DiscreteHmm(q=np.tile(row, (3, 1)), g=[[0.9, 0.1], [0.4, 0.6], [0.2, 0.8]], chi=[1.0, 0.0, 0.0])
    h = np.array([1.0, 0.0, 0.0])
    y = [0, 1, 1, 0, 1, 0, 0, 1]
    series = variance_series_discrete(model, y, h)
    np.testing.assert_allclose(series.sigma2[1:], row[0] * (1 - row[0]), rtol=1e-12)


def test_two_state_fixture_values(two_state):
    # frozen from the direct-definition oracle
    y = [0, 1, 0, 0, 1, 1, 0, 1, 0, 0]
    h = np.array([1.0, 0.0])
    vals = [asymptotic_variance_direct(two_state, y[:t], h) for t in (1, 4, 9)]
    got = [exact_asymptotic_variance_discrete(two_state, y[:t], h) for t in (1, 4, 9)]
    np.testing.assert_allclose(got, vals, rtol=1e-12)
    np.testing.assert_allclose(vals, [0.2051881124300765, 0.19116164328621177, 0.3896501481636062], rtol=1e-12)


# linear Gaussian


def random_lgss(rng, dx, dy=1):
    a = rng.normal(size=(dx, dx))
    a *= 0.9 / max(1e-9, np.abs(np.linalg.eigvals(a)).max())
    c = rng.normal(size=(dx, dx))
    return LinearGaussianModel(
        a=a,
        r=rng.normal(size=(dx, dx)),
        b=rng.normal(size=(dy, dx)),
        s=np.diag(rng.uniform(0.3, 1.5, dy)),
        init_mean=rng.normal(size=dx),
        init_cov=c @ c.T + 0.1 * np.eye(dx),
    )


@given(seeds, st.integers(1, 2), st.integers(1, 2), st.integers(1, 6))
def test_kalman_matches_brute_force(seed, dx, dy, n):
    rng = np.random.default_rng(seed)
    model = random_lgss(rng, dx, dy)
    y = rng.normal(size=(n, dy))
    trace = kalman_filter(model, y)
    for k in range(n):
        mean, cov = gaussian_brute_force_posterior(model, y[: k + 1], k)
        np.testing.assert_allclose(trace.filt_means[k], mean, atol=1e-8)
        np.testing.assert_allclose(trace.filt_covs[k], cov, atol=1e-8)
    mean, cov = gaussian_brute_force_posterior(model, y, n)
    np.testing.assert_allclose(trace.pred_means[n], mean, atol=1e-8)
    np.testing.assert_allclose(trace.pred_covs[n], cov, atol=1e-8)
    assert trace.log_likelihood == pytest.approx(gaussian_brute_force_log_likelihood(model, y), rel=1e-9, abs=1e-9)


@given(seeds, st.integers(1, 3))
def test_filter_covariance_below_predictor_covariance(seed, dx):
    rng = np.random.default_rng(seed)
    model = random_lgss(rng, dx)
    trace = kalman_filter(model, rng.normal(size=(5, 1)))
    for k in range(5):
        gap = trace.pred_covs[k] - trace.filt_covs[k]
        assert np.linalg.eigvalsh(0.5 * (gap + gap.T)).min() > -1e-10


def test_scalar_kalman_closed_form():
    model = LinearGaussianModel(a=[[0.0]], r=[[1.0]], b=[[1.0]], s=[[1.0]], init_mean=[0.0], init_cov=[[1.0]])
    trace = kalman_filter(model, [[2.0]])
    assert trace.filt_means[0][0] == pytest.approx(1.0)
    assert trace.filt_covs[0][0, 0] == pytest.approx(0.5)
    assert trace.log_likelihood == pytest.approx(-0.5 * math.log(2 * math.pi * 2) - 1.0)


def test_singular_innovation_raises():
    model = LinearGaussianModel(a=[[1.0]], r=[[0.0]], b=[[1.0]], s=[[0.0]], init_mean=[0.0], init_cov=[[0.0]])
    with pytest.raises(RankError):
        kalman_filter(model, [[0.0]])


def test_brute_force_refuses_large_problems():
    model = LinearGaussianModel(a=[[0.5]], r=[[1.0]], b=[[1.0]], s=[[1.0]], init_mean=[0.0], init_cov=[[1.0]])
    with pytest.raises(ValueError):
        gaussian_brute_force_posterior(model, np.zeros((250, 1)), 0)
