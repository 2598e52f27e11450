"""Exact filtering oracles and exact asymptotic variances.

Finite-state models are handled with normalized forward recursions; the
likelihood is accumulated as a sum of log one-step observation densities so
nothing underflows over long records. Linear-Gaussian models are handled by
the Kalman recursion, with a brute-force joint-Gaussian conditioner as an
independent check.

Conventions for a record ``y`` of length ``n``:

* ``predictors[k]`` is the law of ``X_k`` given ``y[:k]`` (``k = 0..n``),
* ``filters[k]`` is the law of ``X_k`` given ``y[:k+1]`` (``k = 0..n-1``),
* ``step_densities[k]`` is the density of ``y[k]`` given ``y[:k]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, ModelError, RankError
from .models import DiscreteHmm, LinearGaussianModel

__all__ = [
    "DiscreteFilterTrace",
    "KalmanTrace",
    "VarianceSeries",
    "forward_filter_discrete",
    "unnormalized_kernel_apply_discrete",
    "exact_asymptotic_variance_discrete",
    "exact_filter_variance_discrete",
    "variance_series_discrete",
    "kalman_filter",
    "gaussian_brute_force_posterior",
    "gaussian_brute_force_log_likelihood",
]

_LOG_2PI = math.log(2.0 * math.pi)
BRUTE_FORCE_MAX_DIM = 200


@dataclass(frozen=True, eq=False)
class DiscreteFilterTrace:
    predictors: np.ndarray
    filters: np.ndarray
    step_densities: np.ndarray
    log_likelihood: float

    @property
    def log_step_densities(self) -> np.ndarray:
        return np.log(self.step_densities)


@dataclass(frozen=True, eq=False)
class KalmanTrace:
    pred_means: np.ndarray
    pred_covs: np.ndarray
    filt_means: np.ndarray
    filt_covs: np.ndarray
    step_log_densities: np.ndarray

    @property
    def log_likelihood(self) -> float:
        return float(self.step_log_densities.sum())


@dataclass(frozen=True, eq=False)
class VarianceSeries:
    """Exact asymptotic variances along a record.

    ``sigma2[n]`` is the predictor variance at time ``n`` (given ``y[:n]``),
    ``sigma2_filter[n]`` the filter variance at time ``n`` (given ``y[:n+1]``).
    """

    sigma2: np.ndarray
    sigma2_filter: np.ndarray
    h_label: str = "h"


def _as_vector(h, m: int) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape != (m,):
        raise ModelError(f"test function must be an {m}-vector, got shape {h.shape}")
    return h


def forward_filter_discrete(model: DiscreteHmm, y, chi=None) -> DiscreteFilterTrace:
    """Exact predictor/filter flow and likelihood for a finite-state HMM.

    ``chi`` overrides the model's initial distribution.
    """
    y = model.check_observations(y)
    n, m = len(y), model.m
    pred = np.empty((n + 1, m))
    filt = np.empty((n, m))
    dens = np.empty(n)
    pred[0] = model.chi if chi is None else np.asarray(chi, dtype=float)
    log_lik = 0.0
    for k, yk in enumerate(y):
        weighted = pred[k] * model.g[:, yk]
        ell = weighted.sum()
        if not ell > 0:
            raise DegeneracyError("one-step observation density vanished", time=k)
        dens[k] = ell
        log_lik += math.log(ell)
        filt[k] = weighted / ell
        nxt = filt[k] @ model.q
        pred[k + 1] = nxt / nxt.sum()
    return DiscreteFilterTrace(pred, filt, dens, log_lik)


def unnormalized_kernel_apply_discrete(model: DiscreteHmm, y, h) -> np.ndarray:
    """Apply the likelihood-weighted kernel of the segment ``y`` to the function ``h``.

    ``(L h)(x) = g(x, y_0) sum_x' q(x, x') (L' h)(x')`` where ``L'`` is the kernel
    of the remaining segment; the empty segment is the identity.
    """
    y = model.check_observations(y)
    v = _as_vector(h, model.m).copy()
    for yk in y[::-1]:
        v = model.g[:, yk] * (model.q @ v)
    return v


def exact_asymptotic_variance_discrete(model: DiscreteHmm, y, h, trace: DiscreteFilterTrace | None = None) -> float:
    """Predictor asymptotic variance at time ``n = len(y)`` by a backward sweep.

    Sums, over ``k = 0..n``, the ``predictors[k]``-variance of the centered
    kernel image ``L_{k:n-1}(h - pi_n h)`` divided by ``predictors[k] L_{k:n-1} 1``.
    Both kernel images share a running scale factor, which cancels.
    """
    y = model.check_observations(y)
    h = _as_vector(h, model.m)
    if trace is None:
        trace = forward_filter_discrete(model, y)
    n = len(y)
    pred = trace.predictors
    centered = h - pred[n] @ h
    ones = np.ones(model.m)
    total = 0.0
    for k in range(n, -1, -1):
        if k < n:
            gk = model.g[:, y[k]]
            centered = gk * (model.q @ centered)
            ones = gk * (model.q @ ones)
            scale = ones.max()
            centered /= scale
            ones /= scale
        denom = pred[k] @ ones
        total += pred[k] @ np.square(centered / denom)
    return float(total)


def exact_filter_variance_discrete(model: DiscreteHmm, y, h) -> float:
    """Filter asymptotic variance at time ``n = len(y) - 1`` (given ``y[:n+1]``)."""
    y = model.check_observations(y)
    if len(y) == 0:
        raise ValueError("filter variance needs at least one observation")
    h = _as_vector(h, model.m)
    trace = forward_filter_discrete(model, y)
    n = len(y) - 1
    gn = model.g[:, y[n]]
    f = gn * (h - trace.filters[n] @ h)
    sigma2 = exact_asymptotic_variance_discrete(model, y[:n], f, trace=trace)
    return sigma2 / trace.step_densities[n] ** 2


def variance_series_discrete(model: DiscreteHmm, y, h, h_label: str = "h") -> VarianceSeries:
    """Predictor and filter variances at every time of the record in one pass.

    Keeps, for each start index ``k``, the kernel matrix ``L_{k:n-1}`` rescaled
    to unit max entry and right-multiplies all of them as ``n`` advances, so
    the cost is ``O(n^2 m^2)`` arithmetic but only ``O(n)`` Python steps.
    """
    y = model.check_observations(y)
    h = _as_vector(h, model.m)
    trace = forward_filter_discrete(model, y)
    n_total, m = len(y), model.m
    pred = trace.predictors
    sigma2 = np.empty(n_total + 1)
    sigma2_filt = np.empty(n_total)
    kernels = np.empty((n_total + 1, m, m))
    eye = np.eye(m)

    def variance_of(f, n):
        # rows 0..n of kernels hold L_{k:n-1}
        mats = kernels[: n + 1]
        num = mats @ (f - pred[n] @ f)
        den = np.einsum("km,km->k", pred[: n + 1], mats.sum(axis=2))
        return float(np.einsum("km,km->", pred[: n + 1], np.square(num / den[:, None])))

    for n in range(n_total + 1):
        kernels[n] = eye
        sigma2[n] = variance_of(h, n)
        if n == n_total:
            break
        gn = model.g[:, y[n]]
        f = gn * (h - trace.filters[n] @ h)
        sigma2_filt[n] = variance_of(f, n) / trace.step_densities[n] ** 2
        step = gn[:, None] * model.q
        block = kernels[: n + 1] @ step
        block /= block.max(axis=(1, 2), keepdims=True)
        kernels[: n + 1] = block
    return VarianceSeries(sigma2, sigma2_filt, h_label)


# linear Gaussian


def _gauss_logpdf(resid: np.ndarray, cov: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise RankError("innovation covariance is numerically singular") from None
    z = np.linalg.solve(chol, resid)
    return -0.5 * (len(resid) * _LOG_2PI + 2.0 * np.log(np.diag(chol)).sum() + z @ z)


def kalman_filter(model: LinearGaussianModel, y) -> KalmanTrace:
    """Kalman predict/update recursion with Joseph-form covariance updates."""
    y = model.check_observations(y)
    n, dx = len(y), model.dx
    pm = np.empty((n + 1, dx))
    pc = np.empty((n + 1, dx, dx))
    fm = np.empty((n, dx))
    fc = np.empty((n, dx, dx))
    logd = np.empty(n)
    pm[0], pc[0] = model.init_mean, model.init_cov
    a, b = model.a, model.b
    eye = np.eye(dx)
    for k in range(n):
        mean, cov = pm[k], pc[k]
        innov_cov = b @ cov @ b.T + model.obs_cov
        innov_cov = 0.5 * (innov_cov + innov_cov.T)
        resid = y[k] - b @ mean
        logd[k] = _gauss_logpdf(resid, innov_cov)
        gain = np.linalg.solve(innov_cov, b @ cov).T
        fm[k] = mean + gain @ resid
        ikb = eye - gain @ b
        post = ikb @ cov @ ikb.T + gain @ model.obs_cov @ gain.T
        fc[k] = 0.5 * (post + post.T)
        pm[k + 1] = a @ fm[k]
        nxt = a @ fc[k] @ a.T + model.state_cov
        pc[k + 1] = 0.5 * (nxt + nxt.T)
    return KalmanTrace(pm, pc, fm, fc, logd)


def _joint_linear_map(model: LinearGaussianModel, n_obs: int, k: int):
    """Coefficients of ``X_k`` and ``Y_{0:n_obs-1}`` on ``(X_0, U_0.., V_0..)``."""
    dx, du, dy = model.dx, model.du, model.dy
    n_u = max(k, n_obs)
    total = dx + n_u * du + n_obs * dy
    x_coef = np.zeros((dx, total))
    x_coef[:, :dx] = np.eye(dx)
    xs = [x_coef]
    for j in range(n_u):
        nxt = model.a @ xs[-1]
        nxt[:, dx + j * du : dx + (j + 1) * du] += model.r
        xs.append(nxt)
    ys = []
    for j in range(n_obs):
        yc = model.b @ xs[j]
        off = dx + n_u * du + j * dy
        yc[:, off : off + dy] += model.s
        ys.append(yc)
    base_mean = np.zeros(total)
    base_mean[:dx] = model.init_mean
    base_cov = np.eye(total)
    base_cov[:dx, :dx] = model.init_cov
    y_coef = np.vstack(ys) if ys else np.zeros((0, total))
    return xs[k], y_coef, base_mean, base_cov


def gaussian_brute_force_posterior(model: LinearGaussianModel, y, k: int):
    """Mean and covariance of ``X_k`` given all of ``y`` by explicit joint-Gaussian conditioning.

    Refuses problems whose joint dimension exceeds 200.
    """
    y = model.check_observations(y)
    n_obs = len(y)
    if model.dx + n_obs * model.dy > BRUTE_FORCE_MAX_DIM:
        raise ValueError(f"joint dimension exceeds {BRUTE_FORCE_MAX_DIM}; refusing brute-force conditioning")
    xc, yc, mu, sigma = _joint_linear_map(model, n_obs, k)
    mx, my = xc @ mu, yc @ mu
    sxx = xc @ sigma @ xc.T
    if n_obs == 0:
        return mx, sxx
    syy = yc @ sigma @ yc.T
    sxy = xc @ sigma @ yc.T
    try:
        sol = np.linalg.solve(syy, np.column_stack([y.reshape(-1) - my, sxy.T]))
    except np.linalg.LinAlgError:
        raise RankError("observation covariance is singular") from None
    mean = mx + sxy @ sol[:, 0]
    cov = sxx - sxy @ sol[:, 1:]
    return mean, 0.5 * (cov + cov.T)


def gaussian_brute_force_log_likelihood(model: LinearGaussianModel, y) -> float:
    """Log density of the stacked observations under their joint Gaussian law."""
    y = model.check_observations(y)
    if len(y) * model.dy > BRUTE_FORCE_MAX_DIM:
        raise ValueError(f"joint dimension exceeds {BRUTE_FORCE_MAX_DIM}")
    _, yc, mu, sigma = _joint_linear_map(model, len(y), 0)
    return _gauss_logpdf(y.reshape(-1) - yc @ mu, yc @ sigma @ yc.T)
