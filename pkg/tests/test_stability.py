import math

import numpy as np
import pytest
from scipy import special, stats

from smcstab.errors import ModelError
from smcstab.exact import forward_filter_discrete
from smcstab.functions import indicator
from smcstab.models import Ar1Source, DiscreteHmm, HmmSource, LinearGaussianModel
from smcstab.stability import (
    chi2_envelope,
    clt_variance_experiment,
    forgetting_experiment,
    gaussian_abs_moment,
    likelihood_unbiasedness_experiment,
    loglik_rate_experiment,
    lp_error_experiment,
    trend_test,
    variance_sequence_experiment,
)


def test_trend_test_flags_increasing_series():
    res = trend_test(np.arange(100.0))
    assert res.slope == pytest.approx(1.0)
    assert res.ci[0] > 0 and not res.passed


def test_trend_test_constant_series():
    res = trend_test(np.full(50, 2.5))
    assert res.slope == 0.0 and res.ratio == 1.0 and res.passed


def test_trend_test_rejects_short_or_nonfinite():
    with pytest.raises(ValueError):
        trend_test(np.ones(19))
    with pytest.raises(ValueError):
        trend_test(np.r_[np.ones(30), np.nan])


def test_trend_test_ratio_criterion():
    x = np.r_[np.ones(50), np.ones(49), 10.0]
    res = trend_test(x)
    assert res.ratio == pytest.approx(10.0) and not res.passed


def test_trend_test_calibration_on_iid_noise():
    # replicate-variance-like noise: scaled chi-square(500) draws
    passes = 0
    for seed in range(100):
        x = np.random.default_rng(seed).chisquare(500, size=2000) / 500
        passes += trend_test(x).passed
    assert passes >= 95


def test_chi2_envelope_covers_truth():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(2000):
        s2 = np.mean(np.square(rng.normal(0.0, 2.0, size=50)))
        lo, hi = chi2_envelope(s2, 50, 0.99)
        hits += lo <= 4.0 <= hi
    assert hits / 2000 == pytest.approx(0.99, abs=0.006)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, 4.0])
def test_gaussian_abs_moment(p):
    closed = 2 ** (p / 2) * special.gamma((p + 1) / 2) / math.sqrt(math.pi)
    assert gaussian_abs_moment(p) == pytest.approx(closed, rel=1e-10)


def test_gaussian_abs_moment_known_values():
    assert gaussian_abs_moment(2.0) == pytest.approx(1.0, rel=1e-12)
    assert gaussian_abs_moment(1.0) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-12)


class _Constant:
    label = "constant"

    def __call__(self, particles):
        return np.ones(len(particles))

    def as_vector(self, m):
        return np.ones(m)


def test_lp_constant_function_is_zero(two_state):
    rep = lp_error_experiment(two_state, [0, 1, 0], 3, 2.0, [10, 20], 5, 0, _Constant())
    np.testing.assert_array_equal(rep.values, 0.0)
    assert rep.reference == 0.0


def test_lp_small_run(two_state):
    rep = lp_error_experiment(two_state, [0, 1, 0, 0, 1], 5, 2.0, [200], 400, 1, indicator(0))
    assert rep.reference == pytest.approx(rep.sigma)
    assert rep.relative_gaps[0] < 0.2


def test_lp_needs_discrete_model():
    lg = LinearGaussianModel(a=[[0.5]], r=[[1.0]], b=[[1.0]], s=[[1.0]], init_mean=[0.0], init_cov=[[1.0]])
    with pytest.raises(ModelError):
        lp_error_experiment(lg, np.zeros((3, 1)), 3, 2.0, [10], 5, 0, indicator(0))


def test_forgetting_equal_initials(two_state):
    rep = forgetting_experiment(two_state, [0, 1, 1, 0] * 10, [0.3, 0.7], [0.3, 0.7])
    np.testing.assert_array_equal(rep.tv_gap, 0.0)
    assert rep.passed


def test_forgetting_one_step_mixing():
    row = [0.4, 0.6]
    model = DiscreteHmm(q=[row, row], g=[[0.8, 0.2], [0.3, 0.7]], chi=[0.5, 0.5])
    rep = forgetting_experiment(model, [0, 1] * 20, [0.99, 0.01], [0.01, 0.99])
    assert rep.tv_gap[0] > 0.9
    np.testing.assert_allclose(rep.tv_gap[1:], 0.0, atol=1e-15)


def test_forgetting_needs_positive_q():
    model = DiscreteHmm(q=[[1.0, 0.0], [0.5, 0.5]], g=[[0.8, 0.2], [0.3, 0.7]], chi=[0.5, 0.5])
    with pytest.raises(ModelError):
        forgetting_experiment(model, [0, 1], [0.5, 0.5], [0.1, 0.9])


def test_forgetting_rate_is_negative_for_mixing_model():
    model = DiscreteHmm(q=[[0.95, 0.05], [0.05, 0.95]], g=[[0.6, 0.4], [0.4, 0.6]], chi=[0.5, 0.5])
    y = np.random.default_rng(3).integers(0, 2, 200)
    rep = forgetting_experiment(model, y, [0.99, 0.01], [0.01, 0.99])
    assert rep.passed and rep.slope < 0


def test_loglik_rate_constant_emissions():
    model = DiscreteHmm(q=[[0.7, 0.3], [0.4, 0.6]], g=[[0.25] * 4, [0.25] * 4], chi=[0.5, 0.5])
    rep = loglik_rate_experiment(model, HmmSource(model, 0), 500)
    np.testing.assert_allclose(rep.rate, math.log(0.25), rtol=1e-13)
    assert rep.last_quartile_std == pytest.approx(0.0, abs=1e-13)


def test_loglik_rate_initial_law_effect_is_order_one_over_n(two_state):
    src = HmmSource(two_state, 4)
    a = loglik_rate_experiment(two_state, src, 20_000, chi=[0.99, 0.01]).rate
    b = loglik_rate_experiment(two_state, src, 20_000, chi=[0.01, 0.99]).rate
    n = np.arange(1, 20_001)
    scaled = n[99:] * np.abs(a - b)[99:]
    assert scaled.max() < 10 and np.ptp(scaled) < 1e-6


def test_loglik_rate_lgss():
    model = LinearGaussianModel(a=[[0.9]], r=[[1.0]], b=[[1.0]], s=[[1.0]], init_mean=[0.0], init_cov=[[1.0]])
    rep = loglik_rate_experiment(model, HmmSource(model, 1), 4000)
    assert np.isfinite(rep.limit_estimate) and rep.last_quartile_std < 0.02


def test_variance_experiment_iid_model():
    row = [0.6, 0.4]
    model = DiscreteHmm(q=[row, row], g=[[0.8, 0.2], [0.3, 0.7]], chi=row)
    rep = variance_sequence_experiment(model, HmmSource(model, 2), 200, 120, 60, indicator(0), 3)
    np.testing.assert_allclose(rep.exact_sigma2[1:], 0.24, rtol=1e-12)
    assert rep.variance_dof == 120 and rep.reference_kind == "exact-discrete"
    assert rep.envelope_coverage >= 0.95
    assert rep.passed


def test_variance_experiment_misspecified_source(two_state):
    rep = variance_sequence_experiment(two_state, Ar1Source(0.8, thresholds=(0.0,), seed=1), 200, 100, 300, indicator(0), 4)
    assert rep.degeneracy_aborts == 0 and np.all(rep.variance >= 0)
    # at this replicate count only the slope part of the surrogate is informative
    assert rep.trend.ci[0] <= 0


def test_variance_experiment_cross_replicate_reference():
    from smcstab.models import gaussian_random_walk
    from smcstab.functions import bounded_sigmoid

    model = gaussian_random_walk()
    rep = variance_sequence_experiment(model, HmmSource(model, 1), 100, 30, 40, bounded_sigmoid(0, 3.0), 2)
    assert rep.reference_kind == "cross-replicate-mean" and rep.variance_dof == 29
    assert rep.exact_sigma2 is None


def test_clt_experiment_small(two_state):
    rep = clt_variance_experiment(two_state, [0, 1, 0, 0, 1], 300, 800, [1, 4], indicator(0), 2)
    assert rep.passed
    assert rep.summary()["clt_pass"] is True


def test_unbiasedness_small(two_state):
    y = [0, 1, 0, 0]
    rep = likelihood_unbiasedness_experiment(two_state, y, 20, 3000, 5)
    assert rep.exact == pytest.approx(math.exp(forward_filter_discrete(two_state, y).log_likelihood))
    assert rep.passed
