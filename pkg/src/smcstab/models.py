"""Hidden Markov model representations, simulation and observation sources.

Three model classes share a small vectorized protocol used by the particle
filter:

* ``sample_initial(rng, n)`` draws ``n`` i.i.d. initial states,
* ``sample_transition(particles, rng)`` moves every particle one step,
* ``log_obs_density(particles, y)`` evaluates ``ln g(x, y)`` per particle.

Discrete observations are integers ``0..K-1``; continuous observations are
real vectors of fixed dimension (arrays of shape ``(n, d_y)`` for a stream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np
from scipy.signal import lfilter

from .errors import DimensionError, InputError, ModelError
from .seeding import Purpose, SeedStream, derive_seed

__all__ = [
    "DiscreteHmm",
    "LinearGaussianModel",
    "GenericHmm",
    "Trajectory",
    "HmmSource",
    "Ar1Source",
    "ReplaySource",
    "ObservationSource",
    "simulate_hmm",
    "local_likelihood",
    "stationary_observation_stream",
    "arch_model",
    "gaussian_random_walk",
    "stationary_distribution",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _sample_categorical(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Map uniforms to categories through cumulative rows ``cum`` (shape (n, m))."""
    return (u[:, None] >= cum[:, :-1]).sum(axis=1)


@dataclass(frozen=True, eq=False)
class DiscreteHmm:
    """Finite-state HMM with a finite observation alphabet.

    Parameters
    ----------
    q : (m, m) row-stochastic transition matrix.
    g : (m, K) emission matrix; ``g[x, y]`` is the probability of symbol
        ``y`` in state ``x``.
    chi : (m,) initial distribution.
    """

    q: np.ndarray
    g: np.ndarray
    chi: np.ndarray

    def __post_init__(self):
        q, g, chi = _frozen(self.q), _frozen(self.g), _frozen(self.chi)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise DimensionError(f"q must be square, got shape {q.shape}")
        m = q.shape[0]
        if g.ndim != 2 or g.shape[0] != m:
            raise DimensionError(f"g must have {m} rows, got shape {g.shape}")
        if chi.shape != (m,):
            raise DimensionError(f"chi must have shape ({m},), got {chi.shape}")
        for name, arr in (("q", q), ("g", g), ("chi", chi)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ModelError(f"{name} must be finite and nonnegative")
        if np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-12):
            raise ModelError("rows of q must sum to 1 within 1e-12")
        if abs(chi.sum() - 1.0) > 1e-12:
            raise ModelError("chi must sum to 1 within 1e-12")
        if np.any(g.max(axis=0) <= 0):
            raise ModelError("g has an all-zero column; emission densities must be positive")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "chi", chi)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_g", _frozen(np.log(g)))
        object.__setattr__(self, "_cum_q", _frozen(np.cumsum(q, axis=1)))
        object.__setattr__(self, "_cum_chi", _frozen(np.cumsum(chi)))

    @property
    def m(self) -> int:
        return self.q.shape[0]

    @property
    def k(self) -> int:
        return self.g.shape[1]

    def with_initial(self, chi) -> "DiscreteHmm":
        return DiscreteHmm(self.q, self.g, chi)

    def check_observations(self, y) -> np.ndarray:
        y = np.asarray(y)
        if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= self.k):
            raise ModelError(f"observations must be integers in [0, {self.k})")
        return y.astype(np.intp).reshape(-1)

    # particle protocol
    def sample_initial(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        return _sample_categorical(np.broadcast_to(self._cum_chi, (n, self.m)), u)

    def sample_transition(self, particles: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(particles.shape[0])
        out = np.zeros(particles.shape[0], dtype=np.intp)
        for j in range(self.m - 1):
            out += u >= self._cum_q[:, j].take(particles)
        return out

    def log_obs_density(self, particles: np.ndarray, y) -> np.ndarray:
        return self._log_g[particles, int(y)]

    def obs_density(self, x, y) -> float:
        return float(self.g[int(x), int(y)])


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    """``X_{k+1} = A X_k + R U_k``, ``Y_k = B X_k + S V_k`` with standard normal noise.

    ``X_0 ~ N(init_mean, init_cov)``; ``init_cov`` may be singular (including
    zero for a deterministic start).
    """

    a: np.ndarray
    r: np.ndarray
    b: np.ndarray
    s: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray

    def __post_init__(self):
        a = _frozen(np.atleast_2d(self.a))
        r = _frozen(np.atleast_2d(self.r))
        b = _frozen(np.atleast_2d(self.b))
        s = _frozen(np.atleast_2d(self.s))
        mean = _frozen(np.atleast_1d(self.init_mean))
        cov = _frozen(np.atleast_2d(self.init_cov))
        dx = a.shape[0]
        if a.shape != (dx, dx):
            raise DimensionError(f"A must be square, got {a.shape}")
        if r.shape[0] != dx:
            raise DimensionError(f"R must have {dx} rows, got {r.shape}")
        if b.shape[1] != dx:
            raise DimensionError(f"B must have {dx} columns, got {b.shape}")
        dy = b.shape[0]
        if s.shape != (dy, dy):
            raise DimensionError(f"S must be {dy}x{dy}, got {s.shape}")
        if mean.shape != (dx,) or cov.shape != (dx, dx):
            raise DimensionError("initial mean/covariance dimensions do not match A")
        for name, arr in (("A", a), ("R", r), ("B", b), ("S", s), ("init_mean", mean), ("init_cov", cov)):
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} has non-finite entries")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ModelError("init_cov must be symmetric within 1e-12")
        w, v = np.linalg.eigh(cov)
        if w.min() < -1e-10 * max(1.0, abs(w).max()):
            raise ModelError("init_cov must be positive semidefinite")
        for name, val in (("a", a), ("r", r), ("b", b), ("s", s), ("init_mean", mean), ("init_cov", cov)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_init_factor", _frozen(v * np.sqrt(np.clip(w, 0.0, None))))
        obs_cov = s @ s.T
        object.__setattr__(self, "obs_cov", _frozen(obs_cov))
        object.__setattr__(self, "state_cov", _frozen(r @ r.T))

    @property
    def dx(self) -> int:
        return self.a.shape[0]

    @property
    def du(self) -> int:
        return self.r.shape[1]

    @property
    def dy(self) -> int:
        return self.b.shape[0]

    def _obs_chol(self) -> np.ndarray:
        chol = getattr(self, "_chol_cache", None)
        if chol is None:
            try:
                chol = np.linalg.cholesky(self.obs_cov)
            except np.linalg.LinAlgError:
                raise ModelError("S S^T is singular; observation density undefined") from None
            object.__setattr__(self, "_chol_cache", chol)
        return chol

    def check_observations(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim == 1 and self.dy == 1:
            y = y[:, None]
        if y.ndim != 2 or (y.shape[0] and y.shape[1] != self.dy):
            raise DimensionError(f"observations must have shape (n, {self.dy})")
        return y

    def sample_initial(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dx))
        return self.init_mean + z @ self._init_factor.T

    def sample_transition(self, particles: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.standard_normal((particles.shape[0], self.du))
        return particles @ self.a.T + u @ self.r.T

    def log_obs_density(self, particles: np.ndarray, y) -> np.ndarray:
        chol = self._obs_chol()
        resid = np.asarray(y, dtype=float).reshape(1, -1) - particles @ self.b.T
        z = np.linalg.solve(chol, resid.T)
        log_det = 2.0 * np.log(np.diag(chol)).sum()
        return -0.5 * (self.dy * _LOG_2PI + log_det + (z * z).sum(axis=0))

    def obs_density(self, x, y) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
        return float(np.exp(self.log_obs_density(x, y)[0]))


@dataclass(frozen=True, eq=False)
class GenericHmm:
    """HMM given by user callables on an arbitrary state space.

    With ``vectorized=True`` the callables accept and return arrays of
    states (first axis indexes particles); otherwise they act on one state
    and the particle filter loops over particles.

    In vectorized mode ``initial_sampler(rng, n)`` returns ``n`` states.
    ``transition_density(x, x_new)``, ``initial_density`` and
    ``obs_sampler(x, rng)`` are optional; model checks that need a missing
    density report "not checkable", and simulation needs ``obs_sampler``.
    """

    transition_sampler: Callable[[Any, np.random.Generator], Any]
    obs_density_fn: Callable[[Any, Any], Any]
    initial_sampler: Callable[[np.random.Generator], Any]
    transition_density: Optional[Callable[[Any, Any], Any]] = None
    initial_density: Optional[Callable[[Any], Any]] = None
    obs_sampler: Optional[Callable[[Any, np.random.Generator], Any]] = None
    vectorized: bool = False
    name: str = "generic"

    def check_observations(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return y[:, None] if y.ndim == 1 else y

    def sample_initial(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.initial_sampler(rng, n))
        return np.array([self.initial_sampler(rng) for _ in range(n)])

    def sample_transition(self, particles: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.transition_sampler(particles, rng))
        return np.array([self.transition_sampler(x, rng) for x in particles])

    def log_obs_density(self, particles: np.ndarray, y) -> np.ndarray:
        if self.vectorized:
            dens = np.asarray(self.obs_density_fn(particles, y), dtype=float)
        else:
            dens = np.array([self.obs_density_fn(x, y) for x in particles], dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(dens)

    def obs_density(self, x, y) -> float:
        if self.vectorized:
            return float(np.asarray(self.obs_density_fn(np.asarray([x]), y)).reshape(-1)[0])
        return float(self.obs_density_fn(x, y))


Model = Union[DiscreteHmm, LinearGaussianModel, GenericHmm]


def _norm_pdf(z):
    return np.exp(-0.5 * np.square(z)) / math.sqrt(2.0 * math.pi)


def arch_model(a: float = 0.5, b0: float = 1.0, b1: float = 0.25, obs_sd: float = 2.0, init_sd: float = 1.0) -> GenericHmm:
    """Scalar ARCH(1) state with Gaussian measurements.

    ``X_k = a X_{k-1} + sqrt(b0 + b1 X_{k-1}^2) * zeta_k`` and
    ``Y_k = X_k + obs_sd * V_k``.
    """
    if b0 <= 0 or b1 < 0 or obs_sd <= 0:
        raise ModelError("ARCH model needs b0 > 0, b1 >= 0, obs_sd > 0")

    def scale(x):
        return np.sqrt(b0 + b1 * np.square(x))

    def transition_sampler(x, rng):
        x = np.asarray(x, dtype=float)
        return a * x + scale(x) * rng.standard_normal(x.shape)

    def transition_density(x, x_new):
        sd = scale(np.asarray(x, dtype=float))
        return _norm_pdf((np.asarray(x_new) - a * np.asarray(x)) / sd) / sd

    def obs_density(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)[0]
        return _norm_pdf((y - x) / obs_sd) / obs_sd

    def initial_sampler(rng, n=None):
        return init_sd * rng.standard_normal(n)

    def initial_density(x):
        return _norm_pdf(np.asarray(x) / init_sd) / init_sd

    def obs_sampler(x, rng):
        return float(x) + obs_sd * rng.standard_normal()

    return GenericHmm(
        transition_sampler=transition_sampler,
        obs_density_fn=obs_density,
        initial_sampler=initial_sampler,
        transition_density=transition_density,
        initial_density=initial_density,
        obs_sampler=obs_sampler,
        vectorized=True,
        name="arch",
    )


def gaussian_random_walk(step_sd: float = 1.0, obs_sd: float = 1.0, init_sd: float = 1.0) -> GenericHmm:
    """Scalar random walk ``X_k = X_{k-1} + step_sd * U_k`` observed with Gaussian noise."""

    def transition_sampler(x, rng):
        x = np.asarray(x, dtype=float)
        return x + step_sd * rng.standard_normal(x.shape)

    def transition_density(x, x_new):
        return _norm_pdf((np.asarray(x_new) - np.asarray(x)) / step_sd) / step_sd

    def obs_density(x, y):
        y = np.asarray(y, dtype=float).reshape(-1)[0]
        return _norm_pdf((y - np.asarray(x, dtype=float)) / obs_sd) / obs_sd

    def initial_sampler(rng, n=None):
        return init_sd * rng.standard_normal(n)

    return GenericHmm(
        transition_sampler=transition_sampler,
        obs_density_fn=obs_density,
        initial_sampler=initial_sampler,
        transition_density=transition_density,
        initial_density=lambda x: _norm_pdf(np.asarray(x) / init_sd) / init_sd,
        obs_sampler=lambda x, rng: float(x) + obs_sd * rng.standard_normal(),
        vectorized=True,
        name="random-walk",
    )


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    seed: int

    def __len__(self):
        return len(self.observations)


def simulate_hmm(model: Model, n: int, seed: int) -> Trajectory:
    """Draw ``X_{0:n-1}`` and ``Y_{0:n-1}`` from the model.

    The result is a pure function of ``(model, n, seed)``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = derive_seed(SeedStream(seed), Purpose.SIMULATE)
    if isinstance(model, DiscreteHmm):
        ux, uy = rng.random(n), rng.random(n)
        cum_q, cum_g = model._cum_q, np.cumsum(model.g, axis=1) / model.g.sum(axis=1, keepdims=True)
        states = np.empty(n, dtype=np.intp)
        x = int(np.searchsorted(model._cum_chi[:-1], ux[0], side="right")) if n else 0
        for k in range(n):
            if k:
                x = int(np.searchsorted(cum_q[x, :-1], ux[k], side="right"))
            states[k] = x
        obs = _sample_categorical(cum_g[states], uy) if n else np.empty(0, dtype=np.intp)
        return Trajectory(states, obs.astype(np.intp), seed)
    if isinstance(model, LinearGaussianModel):
        states = np.empty((n, model.dx))
        obs = np.empty((n, model.dy))
        if n:
            x = model.sample_initial(rng, 1)[0]
            for k in range(n):
                states[k] = x
                obs[k] = model.b @ x + model.s @ rng.standard_normal(model.dy)
                x = model.a @ x + model.r @ rng.standard_normal(model.du)
        return Trajectory(states, obs, seed)
    if isinstance(model, GenericHmm):
        if model.obs_sampler is None:
            raise ModelError("GenericHmm has no observation sampler; supply an observation source instead")
        states, obs = [], []
        if n:
            x = np.asarray(model.sample_initial(rng, 1))[0]
            for k in range(n):
                states.append(x)
                obs.append(np.atleast_1d(np.asarray(model.obs_sampler(x, rng), dtype=float)))
                x = np.asarray(model.sample_transition(np.asarray([x]), rng))[0]
        return Trajectory(np.asarray(states), np.asarray(obs).reshape(n, -1), seed)
    raise DimensionError(f"unsupported model type {type(model).__name__}")


def local_likelihood(model: Model, x, y) -> float:
    """``g(x, y)``; raises ``ModelError`` unless the value is positive and finite."""
    value = model.obs_density(x, y)
    if not (np.isfinite(value) and value > 0):
        raise ModelError(f"local likelihood g(x, y) = {value} is not positive and finite")
    return value


def stationary_distribution(q) -> np.ndarray:
    """Left Perron eigenvector of a row-stochastic matrix, normalized to sum 1."""
    w, v = np.linalg.eig(np.asarray(q, dtype=float).T)
    vec = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return vec / vec.sum()


# observation sources


@dataclass(frozen=True, eq=False)
class HmmSource:
    """Observations of a simulated HMM trajectory."""

    model: Model
    seed: int


@dataclass(frozen=True)
class Ar1Source:
    """Stationary Gaussian AR(1) ``Z_k = phi Z_{k-1} + noise_sd * E_k``.

    ``thresholds`` maps ``Z`` into symbols ``0..len(thresholds)`` (symbol is
    the number of thresholds ``<= Z``); ``None`` keeps real values as
    1-vectors.
    """

    phi: float
    noise_sd: float = 1.0
    thresholds: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ModelError("AR(1) source requires |phi| < 1 for stationarity")
        if self.noise_sd <= 0:
            raise ModelError("noise_sd must be positive")
        if self.thresholds is not None:
            object.__setattr__(self, "thresholds", tuple(sorted(float(t) for t in self.thresholds)))


@dataclass(frozen=True)
class ReplaySource:
    """Observations read from a text file: one per line, comma-separated for vectors."""

    path: str
    dtype: str = "auto"  # "auto" | "int" | "float"


ObservationSource = Union[HmmSource, Ar1Source, ReplaySource, np.ndarray]


def _read_replay(src: ReplaySource) -> np.ndarray:
    path = Path(src.path)
    if not path.is_file():
        raise InputError(f"replay file not found: {path}")
    rows = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    tokens = [row.split(",") for row in rows]
    if len({len(t) for t in tokens}) > 1:
        raise InputError(f"{path}: rows have inconsistent widths")
    as_int = src.dtype == "int" or (
        src.dtype == "auto" and tokens and len(tokens[0]) == 1 and all(t[0].strip().lstrip("-").isdigit() for t in tokens)
    )
    try:
        if as_int:
            return np.array([int(t[0]) for t in tokens], dtype=np.intp)
        return np.array([[float(v) for v in t] for t in tokens], dtype=float).reshape(len(tokens), -1)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def stationary_observation_stream(source: ObservationSource, n: int) -> np.ndarray:
    """First ``n`` observations of a source; deterministic per source.

    A plain array is treated as a fixed record.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if isinstance(source, HmmSource):
        return simulate_hmm(source.model, n, source.seed).observations
    if isinstance(source, Ar1Source):
        rng = derive_seed(SeedStream(source.seed), Purpose.SOURCE)
        e = source.noise_sd * rng.standard_normal(n)
        if n:
            e[0] /= math.sqrt(1.0 - source.phi**2)
        z = lfilter([1.0], [1.0, -source.phi], e)
        if source.thresholds is None:
            return z[:, None]
        return np.searchsorted(np.asarray(source.thresholds), z, side="right").astype(np.intp)
    if isinstance(source, ReplaySource):
        data = _read_replay(source)
        if len(data) < n:
            raise InputError(f"replay file {source.path} is truncated: {len(data)} < {n} observations")
        return data[:n]
    if isinstance(source, np.ndarray):
        if len(source) < n:
            raise InputError(f"fixed observation record is truncated: {len(source)} < {n} observations")
        return source[:n]
    raise TypeError(f"unknown observation source {source!r}")
