"""Bootstrap particle filter with multinomial resampling at every step.

One step at observation ``y_n`` weights each particle by ``g(x, y_n)``,
draws ``N`` ancestor indices from the normalized weights and moves each
selected particle through the transition kernel. Weights are formed from
log-densities shifted by their maximum, so a single step cannot underflow;
the running log normalizing constant keeps the shift.

Randomness: replicate ``r`` initializes from the ``(seed, INIT, r)`` stream
and step ``t`` draws from the ``(seed, STEP, r)`` stream positioned at
counter ``t``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numba
import numpy as np

from .errors import DegeneracyError, ModelError
from .seeding import Purpose, SeedStream, StepRng, derive_seed

__all__ = [
    "ParticleSystem",
    "ReplicateRecord",
    "multinomial_resample",
    "systematic_resample",
    "stratified_resample",
    "init_particles",
    "reweight",
    "propagate",
    "bootstrap_step",
    "estimate",
    "log_likelihood_estimate",
    "run_filter",
    "replicate_ensemble",
]


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Particles targeting the predictor at ``time``.

    ``weights`` are ``g(x, y_time) / exp(log_weight_shift)``; they are
    ``None`` until :func:`reweight` has seen the observation at ``time``.
    ``weight_sum`` is their sum in the same shifted units.
    """

    particles: np.ndarray
    time: int = 0
    weights: Optional[np.ndarray] = None
    weight_sum: float = float("nan")
    log_weight_shift: float = 0.0
    log_norm_const: float = 0.0
    steps: int = 0

    @property
    def n(self) -> int:
        return len(self.particles)

    @property
    def log_weight_sum(self) -> float:
        """``ln`` of the unshifted weight sum."""
        return math.log(self.weight_sum) + self.log_weight_shift


# resampling


@numba.njit(cache=True)
def _merge_sorted(weights, u, spacings):
    # Ancestor i for u in (cdf[i-1], cdf[i]]; ties go to the lower index and
    # zero-weight entries are never selected (matters only for u == 0).
    # With spacings (n+1 exponentials) u_j = cumsum(spacings)[j] / sum(spacings),
    # i.e. the order statistics of n uniforms; u is then ignored.
    n_w = weights.shape[0]
    total = 0.0
    last = 0
    for i in range(n_w):
        total += weights[i]
        if weights[i] > 0:
            last = i
    use_spacings = spacings.shape[0] > 0
    n_out = spacings.shape[0] - 1 if use_spacings else u.shape[0]
    scale = total
    if use_spacings:
        s = 0.0
        for j in range(spacings.shape[0]):
            s += spacings[j]
        scale = total / s
    out = np.empty(n_out, dtype=np.intp)
    i = 0
    cdf = weights[0]
    run = 0.0
    for j in range(n_out):
        if use_spacings:
            run += spacings[j]
            target = run * scale
        else:
            target = u[j] * total
        while i < last and (cdf < target or weights[i] <= 0):
            i += 1
            cdf += weights[i]
        out[j] = i
    return out


_EMPTY = np.empty(0)


def _invert_cdf(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF lookup for nondecreasing ``u`` in [0, 1)."""
    return _merge_sorted(np.ascontiguousarray(weights, dtype=np.float64), np.ascontiguousarray(u, dtype=np.float64), _EMPTY)


def multinomial_resample(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws from the normalized ``weights`` (sorted ancestor indices).

    Sorted uniforms come from normalized partial sums of ``n + 1``
    exponentials, so the lookup is a single O(N) merge.
    """
    spacings = rng.standard_exponential(n + 1)
    return _merge_sorted(np.ascontiguousarray(weights, dtype=np.float64), _EMPTY, spacings)


def systematic_resample(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Not covered by the multinomial variance formulas; opt-in only."""
    return _invert_cdf(weights, (np.arange(n) + rng.random()) / n)


def stratified_resample(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Not covered by the multinomial variance formulas; opt-in only."""
    return _invert_cdf(weights, (np.arange(n) + rng.random(n)) / n)


RESAMPLERS: dict[str, Callable] = {
    "multinomial": multinomial_resample,
    "systematic": systematic_resample,
    "stratified": stratified_resample,
}


# filter steps


def init_particles(model, n: int, seed: int, replicate: int = 0) -> ParticleSystem:
    """``n`` i.i.d. draws from the initial law; weights unset."""
    if n < 1:
        raise ValueError("number of particles must be at least 1")
    rng = derive_seed(SeedStream(seed), Purpose.INIT, replicate)
    return ParticleSystem(particles=model.sample_initial(rng, n))


def reweight(ps: ParticleSystem, model, y) -> ParticleSystem:
    """Attach weights ``g(x, y)`` for the observation at ``ps.time``."""
    logw = np.asarray(model.log_obs_density(ps.particles, y), dtype=float)
    shift = logw.max()
    if np.isnan(shift) or shift == np.inf:
        raise ModelError(f"observation density is not finite at time {ps.time}")
    if shift == -np.inf:
        raise DegeneracyError("all particle weights are zero", time=ps.time)
    w = np.exp(logw - shift)
    total = float(w.sum())
    return replace(
        ps,
        weights=w,
        weight_sum=total,
        log_weight_shift=float(shift),
        log_norm_const=ps.log_norm_const + shift + math.log(total) - math.log(ps.n),
        steps=ps.steps + 1,
    )


def propagate(ps: ParticleSystem, model, rng: np.random.Generator, resampler: str = "multinomial") -> ParticleSystem:
    """Resample by the current weights, then move every particle through the kernel."""
    if ps.weights is None:
        raise ValueError("propagate needs weights; call reweight first")
    ancestors = RESAMPLERS[resampler](ps.weights, ps.n, rng)
    moved = model.sample_transition(ps.particles[ancestors], rng)
    return ParticleSystem(
        particles=moved,
        time=ps.time + 1,
        log_norm_const=ps.log_norm_const,
        steps=ps.steps,
    )


def bootstrap_step(ps: ParticleSystem, model, y, rng: np.random.Generator, resampler: str = "multinomial") -> ParticleSystem:
    """One full weight / resample / mutate step at observation ``y``."""
    return propagate(reweight(ps, model, y), model, rng, resampler)


def estimate(ps: ParticleSystem, h, mode: str = "predictor") -> float:
    """Predictor (plain average) or filter (self-normalized) estimate of ``h``."""
    values = np.asarray(h(ps.particles), dtype=float)
    if mode == "predictor":
        return float(values.mean())
    if mode == "filter":
        if ps.weights is None:
            raise ValueError("filter estimate needs weights for the current observation")
        if not ps.weight_sum > 0:
            raise DegeneracyError("weight sum is zero", time=ps.time)
        return float(ps.weights @ values / ps.weight_sum)
    raise ValueError(f"mode must be 'predictor' or 'filter', got {mode!r}")


def log_likelihood_estimate(ps: ParticleSystem) -> float:
    """Running ``sum_k ln(Omega_k / N)``; an unbiased estimate of the likelihood on the exp scale."""
    if ps.steps == 0:
        raise ValueError("no observation has been processed yet")
    return ps.log_norm_const


# runs


@dataclass(eq=False)
class ReplicateRecord:
    """Per-time estimates from one filter run.

    ``pred[label][t]`` for ``t = 0..n``; ``filt[label][t]`` and ``loglik[t]``
    (log-likelihood of ``y[:t+1]``) for ``t = 0..n-1``.
    """

    replicate_id: int
    seed: int
    pred: dict[str, np.ndarray]
    filt: dict[str, np.ndarray]
    loglik: np.ndarray
    snapshots: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.loglik)


def _label(h) -> str:
    return getattr(h, "label", getattr(h, "__name__", repr(h)))


def run_filter(
    model,
    observations,
    n_particles: int,
    seed: int,
    test_functions: Sequence | Mapping,
    replicate: int = 0,
    resampler: str = "multinomial",
    keep_snapshots: bool = False,
) -> ReplicateRecord:
    """Run the bootstrap filter over ``observations`` and record estimates.

    ``test_functions`` is a sequence of labelled callables or a mapping
    ``label -> callable``. Deterministic in ``(model, observations, N, seed, replicate)``.
    """
    y = model.check_observations(observations)
    funcs = dict(test_functions) if isinstance(test_functions, Mapping) else {_label(h): h for h in test_functions}
    n = len(y)
    pred = {k: np.empty(n + 1) for k in funcs}
    filt = {k: np.empty(n) for k in funcs}
    loglik = np.empty(n)
    snapshots = []
    ps = init_particles(model, n_particles, seed, replicate)
    step_rng = StepRng(SeedStream(seed), Purpose.STEP, replicate)
    for t in range(n + 1):
        for k, h in funcs.items():
            pred[k][t] = estimate(ps, h, "predictor")
        if t == n:
            break
        try:
            ps = reweight(ps, model, y[t])
        except DegeneracyError as exc:
            raise DegeneracyError("all particle weights are zero", time=t, replicate=replicate) from exc
        for k, h in funcs.items():
            filt[k][t] = estimate(ps, h, "filter")
        loglik[t] = ps.log_norm_const
        if keep_snapshots:
            snapshots.append((ps.particles.copy(), ps.weights.copy()))
        ps = propagate(ps, model, step_rng.at(t), resampler)
    return ReplicateRecord(replicate, seed, pred, filt, loglik, snapshots)


def replicate_ensemble(
    model,
    observations,
    n_particles: int,
    n_replicates: int,
    base_seed: int,
    test_functions,
    threads: int = 1,
    order: Optional[Sequence[int]] = None,
    resampler: str = "multinomial",
) -> list[ReplicateRecord]:
    """``M`` independent filter runs; record ``r`` uses replicate stream ``r``.

    ``order`` only changes execution order; the returned list is always
    sorted by replicate id.
    """
    if n_replicates < 1:
        raise ValueError("need at least one replicate")
    y = model.check_observations(observations)
    ids = list(range(n_replicates)) if order is None else [int(r) for r in order]
    if sorted(ids) != list(range(n_replicates)):
        raise ValueError("order must be a permutation of range(M)")

    def one(r):
        return run_filter(model, y, n_particles, base_seed, test_functions, replicate=r, resampler=resampler)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, ids))
    else:
        records = [one(r) for r in ids]
    return sorted(records, key=lambda rec: rec.replicate_id)
