"""Numerical checks of the stability assumptions on concrete models.

All extremizations are over user-configured grids, so the reported
constants are one-sided: a grid minimum is an upper bound on the true
infimum and a grid maximum a lower bound on the true supremum. Nested grids
(``2**j + 1`` points per axis) make both monotone under refinement.

Numerical rank uses the threshold ``max(rows, cols) * eps * largest singular value``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ModelError, RankError
from .models import DiscreteHmm, GenericHmm, LinearGaussianModel
from .seeding import Purpose, SeedStream, derive_seed

__all__ = [
    "numerical_rank",
    "observability_matrix",
    "controllability_matrix",
    "block_noise_matrices",
    "LgssStructure",
    "lgss_structure",
    "lgss_block_likelihood",
    "DoeblinCertificate",
    "local_doeblin_constants",
    "AssumptionConfig",
    "CheckResult",
    "AssumptionReport",
    "check_assumptions",
    "STATIONARY_FREQUENCY_TARGET",
]

STATIONARY_FREQUENCY_TARGET = 2.0 / 3.0
_LOG_2PI = math.log(2.0 * math.pi)


def numerical_rank(mat: np.ndarray) -> int:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    tol = max(mat.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    return int(np.sum(sv > tol))


def observability_matrix(a, b, n: int) -> np.ndarray:
    """Rows ``B, BA, ..., BA^{n-1}``."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    blocks, cur = [], b
    for _ in range(n):
        blocks.append(cur)
        cur = cur @ a
    return np.vstack(blocks)


def controllability_matrix(a, r, n: int) -> np.ndarray:
    """Columns ``A^{n-1}R, ..., AR, R``."""
    a, r = np.atleast_2d(a), np.atleast_2d(r)
    blocks, cur = [], r
    for _ in range(n):
        blocks.append(cur)
        cur = a @ cur
    return np.hstack(blocks[::-1])


def block_noise_matrices(model: LinearGaussianModel, n: int):
    """``(D_n, S_n)``: maps of ``U_{0:n-1}`` and ``V_{0:n-1}`` into ``Y_{0:n-1}``.

    Block ``(i, j)`` of ``D_n`` is ``B A^{i-1-j} R`` for ``j < i`` and zero
    otherwise; ``S_n`` is block diagonal in ``S``.
    """
    dy, du = model.dy, model.du
    d = np.zeros((n * dy, n * du))
    powers = [np.eye(model.dx)]
    for _ in range(max(n - 1, 0)):
        powers.append(model.a @ powers[-1])
    for i in range(n):
        for j in range(i):
            d[i * dy : (i + 1) * dy, j * du : (j + 1) * du] = model.b @ powers[i - 1 - j] @ model.r
    s = np.kron(np.eye(n), model.s)
    return d, s


@dataclass(eq=False)
class LgssStructure:
    """Observability/controllability data for ``n = 1..r_max`` (list index ``n - 1``)."""

    obs_matrices: list[np.ndarray]
    ctrl_matrices: list[np.ndarray]
    f_matrices: list[np.ndarray]
    obs_ranks: list[int]
    ctrl_ranks: list[int]
    f_min_eigs: list[float]
    r_star: Optional[int]
    g_matrix: Optional[np.ndarray]
    f_positive_from_r_star: Optional[bool]

    @property
    def obs_matrix(self) -> np.ndarray:
        return self.obs_matrices[(self.r_star or len(self.obs_matrices)) - 1]

    @property
    def ctrl_matrix(self) -> np.ndarray:
        return self.ctrl_matrices[(self.r_star or len(self.ctrl_matrices)) - 1]


def _g_matrix(model: LinearGaussianModel, r: int) -> np.ndarray:
    d, s = block_noise_matrices(model, r)
    c = controllability_matrix(model.a, model.r, r)
    top = np.vstack([d, c])
    noise = np.vstack([s, np.zeros((model.dx, s.shape[1]))])
    return top @ top.T + noise @ noise.T


def lgss_structure(model: LinearGaussianModel, r_max: int) -> LgssStructure:
    """Smallest ``r <= r_max`` with full-rank observability and controllability matrices.

    Also checks that ``F_n = D_n D_n^T + S_n S_n^T`` is positive definite for
    ``r_star <= n <= r_max``. Absence of such ``r`` is reported as ``r_star=None``.
    """
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    obs, ctrl, fs, orank, crank, feigs = [], [], [], [], [], []
    r_star = None
    for n in range(1, r_max + 1):
        o = observability_matrix(model.a, model.b, n)
        c = controllability_matrix(model.a, model.r, n)
        d, s = block_noise_matrices(model, n)
        f = d @ d.T + s @ s.T
        f = 0.5 * (f + f.T)
        obs.append(o)
        ctrl.append(c)
        fs.append(f)
        orank.append(numerical_rank(o))
        crank.append(numerical_rank(c))
        feigs.append(float(np.linalg.eigvalsh(f)[0]))
        if r_star is None and orank[-1] == model.dx and crank[-1] == model.dx:
            r_star = n
    f_pd = None
    g = None
    if r_star is not None:
        f_pd = all(
            feigs[n - 1] > max(fs[n - 1].shape) * np.finfo(float).eps * np.linalg.eigvalsh(fs[n - 1])[-1]
            for n in range(r_star, r_max + 1)
        )
        g = _g_matrix(model, r_star)
    return LgssStructure(obs, ctrl, fs, orank, crank, feigs, r_star, g, f_pd)


def lgss_block_likelihood(model: LinearGaussianModel, x0, y, log: bool = False) -> float:
    """Density of ``y_{0:n-1}`` for the chain started at the point ``x0``.

    ``N(O_n x0, F_n)`` evaluated at the stacked observation vector.
    """
    y = model.check_observations(y)
    n = len(y)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if n == 0:
        return 0.0 if log else 1.0
    o = observability_matrix(model.a, model.b, n)
    d, s = block_noise_matrices(model, n)
    f = d @ d.T + s @ s.T
    try:
        chol = np.linalg.cholesky(0.5 * (f + f.T))
    except np.linalg.LinAlgError:
        raise RankError("F_n is singular; block likelihood undefined") from None
    z = np.linalg.solve(chol, y.reshape(-1) - o @ x0)
    val = -0.5 * (n * model.dy * _LOG_2PI + 2.0 * np.log(np.diag(chol)).sum() + z @ z)
    return float(val) if log else float(math.exp(val))


# local Doeblin constants


def _box(lower, upper) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = np.atleast_1d(np.asarray(lower, dtype=float)), np.atleast_1d(np.asarray(upper, dtype=float))
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ValueError("box bounds must have equal shapes with lower <= upper")
    return lo, hi


def _grid(lo: np.ndarray, hi: np.ndarray, points: int) -> np.ndarray:
    axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
    mesh = np.array(list(itertools.product(*axes)))
    return mesh[:, 0] if len(lo) == 1 else mesh


def _pairwise_density(density, xs: np.ndarray, vectorized: bool) -> np.ndarray:
    if vectorized and xs.ndim == 1:
        return np.asarray(density(xs[:, None], xs[None, :]), dtype=float)
    if vectorized:
        return np.vstack([np.asarray(density(x, xs), dtype=float).reshape(-1) for x in xs])
    return np.array([[float(density(x, xn)) for xn in xs] for x in xs])


@dataclass(frozen=True)
class DoeblinCertificate:
    """Grid extremes of the transition density over ``C x C``.

    ``eps_minus`` is an upper bound on the true infimum and ``eps_plus`` a
    lower bound on the true supremum (one-sided grid semantics).
    """

    lower: tuple
    upper: tuple
    eps_minus: float
    eps_plus: float
    grid_points: int

    @property
    def ratio(self) -> float:
        return self.eps_minus / self.eps_plus


def local_doeblin_constants(model: GenericHmm, lower, upper, grid_points: int) -> DoeblinCertificate:
    """Min and max of ``q(x, x')`` over a product grid on the hyper-rectangle ``C``."""
    if grid_points < 2:
        raise ValueError("need at least 2 grid points per dimension")
    density = getattr(model, "transition_density", None)
    if density is None:
        raise ModelError("model has no transition density; local Doeblin constants not checkable")
    lo, hi = _box(lower, upper)
    xs = _grid(lo, hi, grid_points)
    vals = _pairwise_density(density, xs, getattr(model, "vectorized", False))
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise ModelError("transition density is not positive and finite on C x C (positivity condition violated)")
    return DoeblinCertificate(tuple(map(float, lo)), tuple(map(float, hi)), float(vals.min()), float(vals.max()), grid_points)


# assumption report


@dataclass
class AssumptionConfig:
    """Candidate sets and grids for :func:`check_assumptions`.

    Boxes are ``(lower, upper)`` pairs. ``k_box=None`` means ``K`` is the
    whole observation-block space. For finite-state models the state boxes
    select the integer states inside them.
    """

    r: int = 1
    k_box: Optional[tuple] = None
    c_box: Optional[tuple] = None
    shell_radius: Optional[float] = None
    search_box: Optional[tuple] = None
    eta: float = 1e-3
    d_boxes: Optional[Sequence[tuple]] = None
    delta: float = 0.0
    grid_points: int = 33
    quad_nodes: int = 64
    mc_samples: int = 0
    seed: int = 0
    r_max: int = 5
    max_observations: int = 200


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str  # "pass" | "fail" | "not-checkable"
    value: Optional[float] = None
    threshold: Optional[float] = None
    evidence: str = ""


@dataclass
class AssumptionReport:
    checks: list[CheckResult] = field(default_factory=list)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            lines.append(f"[{c.name}]")
            lines.append(f"status = {c.status}")
            if c.value is not None:
                lines.append(f"value = {c.value:.17g}")
            if c.threshold is not None:
                lines.append(f"threshold = {c.threshold:.17g}")
            if c.evidence:
                lines.append(f"evidence = {c.evidence}")
            lines.append("")
        return "\n".join(lines)


def _blocks(obs: np.ndarray, r: int) -> np.ndarray:
    obs = np.asarray(obs)
    flat = obs.reshape(len(obs), -1).astype(float)
    n_blocks = len(flat) // r
    return flat[: n_blocks * r].reshape(n_blocks, -1)


def _in_box(points: np.ndarray, box) -> np.ndarray:
    lo, hi = _box(*box)
    return np.all((points >= lo) & (points <= hi), axis=1)


def _check_frequency(obs, config: AssumptionConfig) -> CheckResult:
    blocks = _blocks(obs, config.r)
    n = len(blocks)
    if n == 0:
        return CheckResult("stationary-frequency", "not-checkable", evidence="no complete observation blocks")
    inside = np.ones(n, bool) if config.k_box is None else _in_box(blocks, config.k_box)
    hits = int(inside.sum())
    # one-sided 95% Clopper-Pearson lower bound
    lower = 0.0 if hits == 0 else float(stats.beta.ppf(0.05, hits, n - hits + 1))
    status = "pass" if lower > STATIONARY_FREQUENCY_TARGET else "fail"
    return CheckResult(
        "stationary-frequency",
        status,
        lower,
        STATIONARY_FREQUENCY_TARGET,
        f"{hits}/{n} blocks in K; 95% lower confidence bound compared with 2/3",
    )


def _obs_density_grid(model, xs: np.ndarray, y) -> np.ndarray:
    if isinstance(model, LinearGaussianModel):
        pts = xs.reshape(len(xs), -1)
        return np.exp(model.log_obs_density(pts, y))
    return np.exp(model.log_obs_density(xs, y))


def _subsample(items: np.ndarray, cap: int) -> np.ndarray:
    if len(items) <= cap:
        return items
    idx = np.unique(np.linspace(0, len(items) - 1, cap).round().astype(int))
    return items[idx]


def _sphere_directions(d: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    dirs = [np.eye(d)[i] * s for i in range(d) for s in (1.0, -1.0)]
    dirs += [np.array(c) / math.sqrt(d) for c in itertools.product((1.0, -1.0), repeat=d)]
    return np.array(dirs)


def _check_tail(model, obs, config: AssumptionConfig) -> CheckResult:
    name = "tail-ratio"
    if isinstance(model, DiscreteHmm):
        return CheckResult(name, "pass", 0.0, config.eta, "finite state space: C = X leaves no tail")
    if config.shell_radius is None or config.search_box is None:
        return CheckResult(name, "not-checkable", evidence="shell_radius and search_box are required")
    if config.r != 1:
        return CheckResult(name, "not-checkable", evidence="tail check implemented for r = 1 blocks only")
    lo, hi = _box(*config.search_box)
    d = len(lo)
    shell = config.shell_radius * _sphere_directions(d)
    search = _grid(lo, hi, config.grid_points)
    blocks = _blocks(obs, 1)
    keep = np.ones(len(blocks), bool) if config.k_box is None else _in_box(blocks, config.k_box)
    ys = _subsample(blocks[keep], config.max_observations)
    if len(ys) == 0:
        return CheckResult(name, "not-checkable", evidence="no observations inside K")
    shell_pts = shell[:, 0] if d == 1 else shell
    worst = 0.0
    for y in ys:
        top = _obs_density_grid(model, search, y).max()
        worst = max(worst, float(_obs_density_grid(model, shell_pts, y).max() / top))
    status = "pass" if worst <= config.eta else "fail"
    return CheckResult(
        name,
        status,
        worst,
        config.eta,
        f"max over {len(ys)} observations in K of sup(shell radius {config.shell_radius:g}) g / grid sup g",
    )


def _transition_mass(model, x, box, config: AssumptionConfig, rng) -> Optional[float]:
    lo, hi = _box(*box)
    if isinstance(model, DiscreteHmm):
        states = np.arange(model.m)
        sel = (states >= lo[0]) & (states <= hi[0])
        return float(model.q[int(x), sel].sum())
    density = getattr(model, "transition_density", None)
    if density is not None:
        nodes, weights = np.polynomial.legendre.leggauss(config.quad_nodes)
        axes = [(0.5 * (b - a) * nodes + 0.5 * (a + b), 0.5 * (b - a) * weights) for a, b in zip(lo, hi)]
        pts = np.array(list(itertools.product(*[ax[0] for ax in axes])))
        wts = np.prod(np.array(list(itertools.product(*[ax[1] for ax in axes]))), axis=1)
        pts = pts[:, 0] if len(lo) == 1 else pts
        vals = np.asarray(density(x, pts), dtype=float).reshape(-1)
        return float(wts @ vals)
    if config.mc_samples > 0:
        start = np.repeat(np.atleast_2d(x) if isinstance(model, LinearGaussianModel) else np.atleast_1d(x), config.mc_samples, axis=0)
        moved = model.sample_transition(start, rng)
        moved = np.asarray(moved, dtype=float).reshape(config.mc_samples, -1)
        return float(np.mean(np.all((moved >= lo) & (moved <= hi), axis=1)))
    return None


def _state_grid(model, box, points: int) -> np.ndarray:
    lo, hi = _box(*box)
    if isinstance(model, DiscreteHmm):
        states = np.arange(model.m)
        return states[(states >= lo[0]) & (states <= hi[0])]
    return _grid(lo, hi, points)


def _check_minorization(model, obs, config: AssumptionConfig) -> list[CheckResult]:
    if not config.d_boxes:
        return [
            CheckResult("minorization-transition", "not-checkable", evidence="no D_u sets configured"),
            CheckResult("minorization-likelihood", "not-checkable", evidence="no D_u sets configured"),
        ]
    if len(config.d_boxes) != config.r + 1:
        return [CheckResult("minorization-transition", "not-checkable", evidence=f"need r + 1 = {config.r + 1} sets D_0..D_r")]
    rng = derive_seed(SeedStream(config.seed), Purpose.MISC)
    worst_mass = math.inf
    for u in range(1, config.r + 1):
        for x in _state_grid(model, config.d_boxes[u - 1], config.grid_points):
            mass = _transition_mass(model, x, config.d_boxes[u], config, rng)
            if mass is None:
                trans = CheckResult("minorization-transition", "not-checkable", evidence="no transition density and mc_samples = 0")
                break
            worst_mass = min(worst_mass, mass)
        else:
            continue
        break
    else:
        status = "pass" if worst_mass >= config.delta and worst_mass > 0 else "fail"
        trans = CheckResult(
            "minorization-transition",
            status,
            worst_mass,
            config.delta,
            "grid minimum over x in D_{u-1} of Q(x, D_u), u = 1..r",
        )
    ys = _subsample(np.asarray(obs), config.max_observations)
    worst_g = math.inf
    neg_logs = []
    for y in ys:
        inner = math.inf
        for box in config.d_boxes:
            xs = _state_grid(model, box, config.grid_points)
            inner = min(inner, float(_obs_density_grid(model, xs, y).min()))
        worst_g = min(worst_g, inner)
        neg_logs.append(max(0.0, -math.log(inner)) if inner > 0 else math.inf)
    mean_neg_log = float(np.mean(neg_logs)) if neg_logs else math.nan
    status = "pass" if worst_g > 0 and np.isfinite(mean_neg_log) else "fail"
    like = CheckResult(
        "minorization-likelihood",
        status,
        worst_g,
        0.0,
        f"grid inf of g over D_u and observed y; empirical mean of ln^- inf g = {mean_neg_log:.6g}",
    )
    return [trans, like]


def _check_lgss(model, config: AssumptionConfig) -> CheckResult:
    if not isinstance(model, LinearGaussianModel):
        return CheckResult("lgss-structure", "not-checkable", evidence="not a linear Gaussian model")
    structure = lgss_structure(model, config.r_max)
    s_full = numerical_rank(model.s) == model.dy
    ok = structure.r_star is not None and s_full and bool(structure.f_positive_from_r_star)
    return CheckResult(
        "lgss-structure",
        "pass" if ok else "fail",
        float(structure.r_star) if structure.r_star is not None else None,
        float(config.r_max),
        f"observability ranks {structure.obs_ranks}, controllability ranks {structure.ctrl_ranks}, "
        f"S full rank = {s_full}, F_n positive definite from r_star = {structure.f_positive_from_r_star}",
    )


def check_assumptions(model, obs_sample, config: AssumptionConfig) -> AssumptionReport:
    """Run every configured check; unconfigured or impossible checks are reported, never skipped."""
    obs = np.asarray(obs_sample)
    report = AssumptionReport()
    report.checks.append(_check_frequency(obs, config))
    report.checks.append(_check_tail(model, obs, config))
    report.checks.extend(_check_minorization(model, obs, config))
    if isinstance(model, LinearGaussianModel):
        report.checks.append(_check_lgss(model, config))
    return report
