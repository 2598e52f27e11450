"""Desk-scale stability experiments for the bootstrap filter.

Long-horizon variance series, scaled L^p errors, forgetting of the initial
law and the normalized log-likelihood. "Tight" is operationalized by
:func:`trend_test`: no significantly positive linear trend and a bounded
ratio between the late maximum and the early median.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import statsmodels.api as sm
from scipy import integrate, special, stats

from .errors import ModelError
from .exact import (
    forward_filter_discrete,
    exact_asymptotic_variance_discrete,
    exact_filter_variance_discrete,
    kalman_filter,
    variance_series_discrete,
)
from .models import DiscreteHmm, LinearGaussianModel, ObservationSource, stationary_observation_stream
from .seeding import Purpose, SeedStream, derive_key
from .smc import replicate_ensemble

__all__ = [
    "TrendResult",
    "StabilityReport",
    "LpReport",
    "ForgettingReport",
    "LoglikRateReport",
    "trend_test",
    "variance_sequence_experiment",
    "lp_error_experiment",
    "gaussian_abs_moment",
    "forgetting_experiment",
    "loglik_rate_experiment",
    "chi2_envelope",
    "CltReport",
    "clt_variance_experiment",
    "UnbiasednessReport",
    "likelihood_unbiasedness_experiment",
]

DEFAULT_LEVEL = 0.95
DEFAULT_RATIO_MAX = 3.0
ENVELOPE_LEVEL = 0.99


@dataclass(frozen=True)
class TrendResult:
    slope: float
    ci: tuple[float, float]
    ratio: float
    passed: bool
    level: float = DEFAULT_LEVEL
    ratio_max: float = DEFAULT_RATIO_MAX
    maxlags: int = 0


def _newey_west_lags(n: int) -> int:
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def _half_ratio(x: np.ndarray) -> float:
    half = len(x) // 2
    late_max, early_median = float(np.max(x[half:])), float(np.median(x[:half]))
    if early_median == 0.0:
        return 1.0 if late_max == 0.0 else math.inf
    return late_max / early_median


def trend_test(
    series,
    level: float = DEFAULT_LEVEL,
    ratio_max: float = DEFAULT_RATIO_MAX,
    maxlags: Optional[int] = None,
) -> TrendResult:
    """OLS slope of ``series`` against its index with a robust confidence interval.

    The interval uses the Newey-West sandwich covariance (Bartlett kernel,
    ``maxlags = floor(4 (n/100)^(2/9))`` by default; ``maxlags=0`` gives the
    plain heteroskedasticity-robust HC0 interval). Passes when the interval
    reaches down to zero or below and ``max(second half) / median(first half)
    <= ratio_max``.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) < 20:
        raise ValueError("trend test needs a 1-D series of length >= 20")
    if not np.all(np.isfinite(x)):
        raise ValueError("series has non-finite entries")
    ratio = _half_ratio(x)
    if np.all(x == x[0]):
        return TrendResult(0.0, (0.0, 0.0), ratio, ratio <= ratio_max, level, ratio_max, 0)
    lags = _newey_west_lags(len(x)) if maxlags is None else int(maxlags)
    design = sm.add_constant(np.arange(len(x), dtype=float))
    fit = sm.OLS(x, design).fit(cov_type="HAC", cov_kwds={"maxlags": lags, "use_correction": False})
    lo, hi = fit.conf_int(alpha=1.0 - level)[1]
    slope = float(fit.params[1])
    passed = bool(lo <= 0.0 and ratio <= ratio_max)
    return TrendResult(slope, (float(lo), float(hi)), ratio, passed, level, ratio_max, lags)


def chi2_envelope(estimate: np.ndarray, dof: int, level: float = ENVELOPE_LEVEL):
    """Two-sided ``level`` confidence interval for a variance from a chi-square(dof) estimate."""
    alpha = 1.0 - level
    lo = dof * np.asarray(estimate) / stats.chi2.ppf(1.0 - alpha / 2.0, dof)
    hi = dof * np.asarray(estimate) / stats.chi2.ppf(alpha / 2.0, dof)
    return lo, hi


def _exact_reference(model, y, h):
    """Exact predictor means of ``h`` at times ``0..len(y)``, or ``None``."""
    if isinstance(model, DiscreteHmm):
        return forward_filter_discrete(model, y).predictors @ h.as_vector(model.m)
    if isinstance(model, LinearGaussianModel) and hasattr(h, "gaussian_mean"):
        trace = kalman_filter(model, y)
        vals = [h.gaussian_mean(mu, cov) for mu, cov in zip(trace.pred_means, trace.pred_covs)]
        if any(v is None for v in vals):
            return None
        return np.asarray(vals, dtype=float)
    return None


@dataclass(eq=False)
class StabilityReport:
    """Per-time replicate variance of ``sqrt(N) (estimate - reference)`` over ``0..n_max``."""

    n_max: int
    n_particles: int
    n_replicates: int
    h_label: str
    reference_kind: str
    reference: np.ndarray
    variance: np.ndarray
    variance_dof: int
    exact_sigma2: Optional[np.ndarray]
    envelope_coverage: Optional[float]
    trend: TrendResult
    degeneracy_aborts: int = 0
    observations: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.trend.passed

    def summary(self) -> dict:
        return {
            "n_max": self.n_max,
            "N": self.n_particles,
            "M": self.n_replicates,
            "h": self.h_label,
            "reference": self.reference_kind,
            "slope": self.trend.slope,
            "slope_ci": list(self.trend.ci),
            "slope_level": self.trend.level,
            "half_ratio": self.trend.ratio,
            "ratio_max": self.trend.ratio_max,
            "hac_maxlags": self.trend.maxlags,
            "envelope_coverage": self.envelope_coverage,
            "degeneracy_aborts": self.degeneracy_aborts,
            "tightness_pass": self.trend.passed,
        }


def variance_sequence_experiment(
    model,
    obs_source: ObservationSource,
    n_particles: int,
    n_replicates: int,
    n_max: int,
    h,
    seed: int,
    level: float = DEFAULT_LEVEL,
    ratio_max: float = DEFAULT_RATIO_MAX,
    threads: int = 1,
) -> StabilityReport:
    """Run ``M`` filters on one observation stream and test the variance series for a trend.

    The reference is the exact predictor mean (finite-state or Kalman) and
    the variance is the mean square about it (``M`` degrees of freedom);
    without an exact reference it is the sample variance about the
    cross-replicate mean (``M - 1`` degrees of freedom). The trend test runs
    on times ``1..n_max``.
    """
    y = model.check_observations(stationary_observation_stream(obs_source, n_max))
    records = replicate_ensemble(model, y, n_particles, n_replicates, seed, [h], threads=threads)
    label = getattr(h, "label", "h")
    est = np.vstack([rec.pred[label] for rec in records])
    ref = _exact_reference(model, y, h)
    scaled = math.sqrt(n_particles) * est
    if ref is not None:
        kind = "exact-discrete" if isinstance(model, DiscreteHmm) else "kalman"
        variance = np.mean(np.square(scaled - math.sqrt(n_particles) * ref), axis=0)
        dof = n_replicates
    else:
        kind = "cross-replicate-mean"
        ref = est.mean(axis=0)
        variance = np.var(scaled, axis=0, ddof=1)
        dof = n_replicates - 1
    exact = coverage = None
    if isinstance(model, DiscreteHmm):
        exact = variance_series_discrete(model, y, h.as_vector(model.m), label).sigma2
        lo, hi = chi2_envelope(variance, dof)
        coverage = float(np.mean((exact >= lo) & (exact <= hi)))
    trend = trend_test(variance[1:], level=level, ratio_max=ratio_max)
    return StabilityReport(
        n_max=n_max,
        n_particles=n_particles,
        n_replicates=n_replicates,
        h_label=label,
        reference_kind=kind,
        reference=ref,
        variance=variance,
        variance_dof=dof,
        exact_sigma2=exact,
        envelope_coverage=coverage,
        trend=trend,
        observations=y,
    )


@dataclass(eq=False)
class CltReport:
    """Replicate variances of ``sqrt(N) (estimate - exact)`` at selected times of a fixed record.

    Predictor entries refer to the law of ``X_n`` given ``y[:n]``, filter
    entries to the law given ``y[:n+1]``. Variances are mean squares about
    the exact value, so the chi-square envelopes use ``M`` degrees of freedom.
    """

    times: list[int]
    n_particles: int
    n_replicates: int
    h_label: str
    pred_variance: np.ndarray
    filt_variance: np.ndarray
    pred_exact: np.ndarray
    filt_exact: np.ndarray
    pred_envelope: tuple[np.ndarray, np.ndarray]
    filt_envelope: tuple[np.ndarray, np.ndarray]
    level: float

    @property
    def pred_inside(self) -> np.ndarray:
        lo, hi = self.pred_envelope
        return (self.pred_exact >= lo) & (self.pred_exact <= hi)

    @property
    def filt_inside(self) -> np.ndarray:
        lo, hi = self.filt_envelope
        return (self.filt_exact >= lo) & (self.filt_exact <= hi)

    @property
    def passed(self) -> bool:
        return bool(self.pred_inside.all() and self.filt_inside.all())

    def summary(self) -> dict:
        return {
            "times": list(self.times),
            "N": self.n_particles,
            "M": self.n_replicates,
            "h": self.h_label,
            "level": self.level,
            "pred_variance": [float(v) for v in self.pred_variance],
            "pred_exact": [float(v) for v in self.pred_exact],
            "pred_inside": [bool(v) for v in self.pred_inside],
            "filt_variance": [float(v) for v in self.filt_variance],
            "filt_exact": [float(v) for v in self.filt_exact],
            "filt_inside": [bool(v) for v in self.filt_inside],
            "clt_pass": self.passed,
        }


def clt_variance_experiment(
    model: DiscreteHmm,
    observations,
    n_particles: int,
    n_replicates: int,
    times: Sequence[int],
    h,
    seed: int,
    level: float = ENVELOPE_LEVEL,
    threads: int = 1,
) -> CltReport:
    """Compare replicate variances with the exact asymptotic variances at ``times``."""
    if not isinstance(model, DiscreteHmm):
        raise ModelError("CLT variance experiment needs a finite-state model")
    y = model.check_observations(observations)
    times = sorted(int(t) for t in times)
    if not times or times[0] < 0 or times[-1] >= len(y):
        raise ValueError(f"times must lie in 0..{len(y) - 1}")
    y = y[: times[-1] + 1]
    hv = h.as_vector(model.m)
    trace = forward_filter_discrete(model, y)
    label = getattr(h, "label", "h")
    records = replicate_ensemble(model, y, n_particles, n_replicates, seed, [h], threads=threads)
    pred = np.vstack([rec.pred[label][times] for rec in records])
    filt = np.vstack([rec.filt[label][times] for rec in records])
    pred_ref = trace.predictors[times] @ hv
    filt_ref = trace.filters[times] @ hv
    pred_var = n_particles * np.mean(np.square(pred - pred_ref), axis=0)
    filt_var = n_particles * np.mean(np.square(filt - filt_ref), axis=0)
    pred_exact = np.array([exact_asymptotic_variance_discrete(model, y[:t], hv) for t in times])
    filt_exact = np.array([exact_filter_variance_discrete(model, y[: t + 1], hv) for t in times])
    return CltReport(
        times=times,
        n_particles=n_particles,
        n_replicates=n_replicates,
        h_label=label,
        pred_variance=pred_var,
        filt_variance=filt_var,
        pred_exact=pred_exact,
        filt_exact=filt_exact,
        pred_envelope=chi2_envelope(pred_var, n_replicates, level),
        filt_envelope=chi2_envelope(filt_var, n_replicates, level),
        level=level,
    )


@dataclass(frozen=True)
class UnbiasednessReport:
    """Monte Carlo mean of the likelihood estimate against the exact likelihood."""

    exact: float
    mean: float
    std_error: float
    ci: tuple[float, float]
    n_particles: int
    n_replicates: int
    level: float

    @property
    def passed(self) -> bool:
        return bool(self.ci[0] <= self.exact <= self.ci[1])

    def summary(self) -> dict:
        return {
            "exact": self.exact,
            "mean": self.mean,
            "std_error": self.std_error,
            "ci": list(self.ci),
            "N": self.n_particles,
            "M": self.n_replicates,
            "level": self.level,
            "unbiasedness_pass": self.passed,
        }


def likelihood_unbiasedness_experiment(
    model: DiscreteHmm,
    observations,
    n_particles: int,
    n_replicates: int,
    seed: int,
    level: float = ENVELOPE_LEVEL,
    threads: int = 1,
) -> UnbiasednessReport:
    """Mean of ``exp(log-likelihood estimate)`` with a normal ``level`` CI.

    Estimates are scaled by the exact likelihood before averaging so the
    mean is taken on an O(1) scale.
    """
    if not isinstance(model, DiscreteHmm):
        raise ModelError("unbiasedness experiment needs a finite-state model")
    y = model.check_observations(observations)
    if len(y) == 0:
        raise ValueError("need at least one observation")
    exact_log = forward_filter_discrete(model, y).log_likelihood
    records = replicate_ensemble(model, y, n_particles, n_replicates, seed, {}, threads=threads)
    ratios = np.exp(np.array([rec.loglik[-1] for rec in records]) - exact_log)
    exact = math.exp(exact_log)
    mean = float(ratios.mean()) * exact
    se = float(ratios.std(ddof=1) / math.sqrt(n_replicates)) * exact
    z = stats.norm.ppf(0.5 + level / 2.0)
    return UnbiasednessReport(exact, mean, se, (float(mean - z * se), float(mean + z * se)), n_particles, n_replicates, level)


def gaussian_abs_moment(p: float) -> float:
    """``E|Z|^p`` for standard normal ``Z`` by adaptive quadrature (tolerance 1e-10)."""
    val, _ = integrate.quad(
        lambda z: 2.0 * z**p * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi),
        0.0,
        np.inf,
        epsabs=1e-12,
        epsrel=1e-10,
        limit=200,
    )
    return val


def _gaussian_abs_moment_closed_form(p: float) -> float:
    return 2.0 ** (p / 2.0) * special.gamma((p + 1.0) / 2.0) / math.sqrt(math.pi)


@dataclass(eq=False)
class LpReport:
    p: float
    time: int
    n_grid: list[int]
    values: np.ndarray
    sigma: float
    gaussian_moment: float
    closed_form_moment: float
    reference: float

    @property
    def relative_gaps(self) -> np.ndarray:
        if self.reference == 0.0:
            return np.where(self.values == 0.0, 0.0, np.inf)
        return np.abs(self.values - self.reference) / self.reference

    def passed(self, tolerance: float = 0.10) -> bool:
        return bool(self.relative_gaps[-1] <= tolerance)

    def summary(self) -> dict:
        return {
            "p": self.p,
            "time": self.time,
            "N_grid": list(self.n_grid),
            "values": [float(v) for v in self.values],
            "sigma": self.sigma,
            "gaussian_moment": self.gaussian_moment,
            "closed_form_moment": self.closed_form_moment,
            "reference": self.reference,
            "relative_gaps": [float(v) for v in self.relative_gaps],
        }


def _sub_seed(seed: int, tag: int) -> int:
    return derive_key(SeedStream(seed, (int(tag),)), Purpose.MISC)[0]


def lp_error_experiment(
    model: DiscreteHmm,
    observations,
    n: int,
    p: float,
    n_grid: Sequence[int],
    n_replicates: int,
    seed: int,
    h,
    threads: int = 1,
) -> LpReport:
    """``sqrt(N) (E|estimate - exact|^p)^(1/p)`` of the predictor at time ``n`` for each ``N``.

    The reference is ``sigma_n (E|Z|^p)^(1/p)`` with ``sigma_n`` the exact
    asymptotic standard deviation and the Gaussian moment from quadrature.
    """
    if not isinstance(model, DiscreteHmm):
        raise ModelError("L^p experiment needs a finite-state model for the exact variance")
    if p < 1:
        raise ValueError("p must be >= 1")
    y = model.check_observations(observations)[:n]
    if len(y) != n:
        raise ValueError(f"need at least {n} observations")
    hv = h.as_vector(model.m)
    exact_mean = forward_filter_discrete(model, y).predictors[n] @ hv
    sigma = math.sqrt(exact_asymptotic_variance_discrete(model, y, hv))
    moment = gaussian_abs_moment(p)
    label = getattr(h, "label", "h")
    values = []
    for n_part in n_grid:
        records = replicate_ensemble(model, y, n_part, n_replicates, _sub_seed(seed, n_part), [h], threads=threads)
        err = np.array([rec.pred[label][n] for rec in records]) - exact_mean
        values.append(math.sqrt(n_part) * np.mean(np.abs(err) ** p) ** (1.0 / p))
    return LpReport(
        p=float(p),
        time=n,
        n_grid=[int(v) for v in n_grid],
        values=np.asarray(values),
        sigma=sigma,
        gaussian_moment=moment,
        closed_form_moment=_gaussian_abs_moment_closed_form(p),
        reference=sigma * moment ** (1.0 / p),
    )


@dataclass(eq=False)
class ForgettingReport:
    loglik_gap: np.ndarray
    tv_gap: np.ndarray
    slope: Optional[float]
    slope_ci: Optional[tuple[float, float]]
    loglik_slope: Optional[float]
    loglik_slope_ci: Optional[tuple[float, float]]
    level: float
    floor: float

    @property
    def rate(self) -> Optional[float]:
        """Fitted per-step contraction factor of the total-variation gap."""
        return None if self.slope is None else math.exp(self.slope)

    @property
    def passed(self) -> bool:
        if self.slope is None:
            # nothing above the floor: the gap is already (numerically) zero
            return bool(np.all(self.tv_gap[1:] <= self.floor))
        return bool(self.slope_ci[1] < 0.0)

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "slope_ci": None if self.slope_ci is None else list(self.slope_ci),
            "rate": self.rate,
            "loglik_slope": self.loglik_slope,
            "loglik_slope_ci": None if self.loglik_slope_ci is None else list(self.loglik_slope_ci),
            "level": self.level,
            "floor": self.floor,
            "forgetting_pass": self.passed,
        }


def _log_linear_fit(gap: np.ndarray, floor: float, level: float):
    k = np.flatnonzero(gap > floor)
    if len(k) < 3:
        return None, None
    design = sm.add_constant(k.astype(float))
    fit = sm.OLS(np.log(gap[k]), design).fit(cov_type="HAC", cov_kwds={"maxlags": _newey_west_lags(len(k))})
    lo, hi = fit.conf_int(alpha=1.0 - level)[1]
    return float(fit.params[1]), (float(lo), float(hi))


def forgetting_experiment(
    model: DiscreteHmm,
    y,
    chi_a,
    chi_b,
    level: float = 0.99,
    floor: float = 1e-12,
) -> ForgettingReport:
    """Gaps between two exact filter flows started from ``chi_a`` and ``chi_b``.

    ``loglik_gap[k] = |ln l_a(y_k) - ln l_b(y_k)|`` and ``tv_gap[k]`` is the
    total-variation distance between the two predictors at time ``k``.
    Log-linear fits use only entries above ``floor`` (rounding noise below).
    """
    if np.any(model.q <= 0):
        raise ModelError("forgetting experiment requires all transition entries > 0")
    ta = forward_filter_discrete(model, y, chi=chi_a)
    tb = forward_filter_discrete(model, y, chi=chi_b)
    loglik_gap = np.abs(np.log(ta.step_densities) - np.log(tb.step_densities))
    tv_gap = 0.5 * np.abs(ta.predictors - tb.predictors).sum(axis=1)
    slope, ci = _log_linear_fit(tv_gap, floor, level)
    ll_slope, ll_ci = _log_linear_fit(loglik_gap, floor, level)
    return ForgettingReport(loglik_gap, tv_gap, slope, ci, ll_slope, ll_ci, level, floor)


@dataclass(eq=False)
class LoglikRateReport:
    """``rate[i]`` is ``ln L(y[:i+1]) / (i + 1)``."""

    rate: np.ndarray
    last_quartile_std: float

    @property
    def limit_estimate(self) -> float:
        return float(self.rate[-1])

    def summary(self) -> dict:
        return {
            "n_max": len(self.rate),
            "limit_estimate": self.limit_estimate,
            "last_quartile_std": self.last_quartile_std,
        }


def loglik_rate_experiment(model, obs_source: ObservationSource, n_max: int, chi=None) -> LoglikRateReport:
    """Normalized exact log-likelihood along a stationary observation stream."""
    if n_max < 4:
        raise ValueError("n_max must be at least 4")
    y = stationary_observation_stream(obs_source, n_max)
    if isinstance(model, DiscreteHmm):
        logs = np.log(forward_filter_discrete(model, y, chi=chi).step_densities)
    elif isinstance(model, LinearGaussianModel):
        if chi is not None:
            raise ValueError("initial override is only supported for finite-state models")
        logs = kalman_filter(model, y).step_log_densities
    else:
        raise ModelError("exact log-likelihood needs a finite-state or linear-Gaussian model")
    rate = np.cumsum(logs) / np.arange(1, n_max + 1)
    tail = rate[-(n_max // 4) :]
    return LoglikRateReport(rate, float(np.std(tail, ddof=1)))
