"""Command-line entry point.

``smcstab <command> --config <path> [--out <dir>] [--seed <u64>] [--threads <k>]``

Exit status: 0 when the experiment passes (or has no pass criterion),
1 on experiment failure, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import COMMANDS, ExperimentConfig, build_source, load_config, load_model, suggest_key
from .errors import ConfigError, DegeneracyError, InputError, ModelError
from .exact import variance_series_discrete
from .models import DiscreteHmm, LinearGaussianModel, simulate_hmm, stationary_observation_stream
from .smc import run_filter
from .stability import (
    chi2_envelope,
    clt_variance_experiment,
    forgetting_experiment,
    lp_error_experiment,
    loglik_rate_experiment,
    variance_sequence_experiment,
)
from .verify import AssumptionConfig, CheckResult, check_assumptions, lgss_structure, local_doeblin_constants

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _flat(x) -> np.ndarray:
    x = np.asarray(x)
    return x[:, None] if x.ndim == 1 else x.reshape(len(x), -1)


def _observations(cfg: ExperimentConfig, model, n: int) -> np.ndarray:
    return stationary_observation_stream(build_source(cfg.source, model, cfg.base_seed), n)


def _require_discrete(model, command: str):
    if not isinstance(model, DiscreteHmm):
        raise ConfigError([f"model: command {command!r} needs a discrete model"])


def _h(cfg: ExperimentConfig):
    return cfg.test_functions()[0]


def cmd_simulate(cfg, model, out: Path) -> bool:
    traj = simulate_hmm(model, cfg.n_max, cfg.base_seed)
    xs, ys = _flat(traj.states), _flat(traj.observations)
    schema = ["time"] + [f"x{i}" for i in range(xs.shape[1])] + [f"y{i}" for i in range(ys.shape[1])]
    rows = [[t, *xs[t].tolist(), *ys[t].tolist()] for t in range(len(xs))]
    io.write_series_csv(out / "trajectory.csv", rows, schema)
    io.write_summary_json(out / "summary.json", {"command": "simulate", "n": cfg.n_max, "seed": cfg.base_seed})
    return True


def cmd_filter(cfg, model, out: Path) -> bool:
    y = _observations(cfg, model, cfg.n_max)
    rec = run_filter(model, y, cfg.N, cfg.base_seed, cfg.test_functions())
    io.write_records_csv(out / "records.csv", [rec])
    io.write_summary_json(
        out / "summary.json",
        {"command": "filter", "N": cfg.N, "n": cfg.n_max, "seed": cfg.base_seed, "log_likelihood": rec.loglik[-1] if len(rec.loglik) else 0.0},
    )
    return True


def cmd_variance(cfg, model, out: Path) -> bool:
    _require_discrete(model, "variance")
    y = _observations(cfg, model, cfg.n_max)
    h = _h(cfg)
    rep = clt_variance_experiment(
        model, y, cfg.N, cfg.M, cfg.times, h, cfg.base_seed, level=cfg.thresholds.envelope_level, threads=cfg.threads
    )
    rows = []
    for name, var, exact, (lo, hi), inside in (
        ("pred", rep.pred_variance, rep.pred_exact, rep.pred_envelope, rep.pred_inside),
        ("filt", rep.filt_variance, rep.filt_exact, rep.filt_envelope, rep.filt_inside),
    ):
        for i, t in enumerate(rep.times):
            rows.append([t, name, rep.h_label, var[i], exact[i], lo[i], hi[i], bool(inside[i])])
    io.write_series_csv(
        out / "variance.csv", rows, ["time", "estimator", "function", "empirical", "exact", "lower", "upper", "inside"]
    )
    schema, exact_rows = io.variance_series_rows(variance_series_discrete(model, y, h.as_vector(model.m), h.label))
    io.write_series_csv(out / "exact_variance.csv", exact_rows, schema)
    io.write_summary_json(out / "summary.json", {"command": "variance", "seed": cfg.base_seed, **rep.summary()})
    return rep.passed


def cmd_stability(cfg, model, out: Path) -> bool:
    h = _h(cfg)
    source = build_source(cfg.source, model, cfg.base_seed)
    try:
        rep = variance_sequence_experiment(
            model,
            source,
            cfg.N,
            cfg.M,
            cfg.n_max,
            h,
            cfg.base_seed,
            level=cfg.thresholds.level,
            ratio_max=cfg.thresholds.ratio_max,
            threads=cfg.threads,
        )
    except DegeneracyError as exc:
        io.write_summary_json(
            out / "summary.json",
            {"command": "stability", "degeneracy_aborts": 1, "time": exc.time, "replicate": exc.replicate, "tightness_pass": False},
        )
        raise
    exact = rep.exact_sigma2
    if exact is not None:
        lo, hi = chi2_envelope(rep.variance, rep.variance_dof, cfg.thresholds.envelope_level)
    rows = [
        [
            t,
            rep.reference[t],
            rep.variance[t],
            None if exact is None else exact[t],
            None if exact is None else lo[t],
            None if exact is None else hi[t],
        ]
        for t in range(cfg.n_max + 1)
    ]
    io.write_series_csv(out / "stability.csv", rows, ["time", "reference", "variance", "exact_sigma2", "lower", "upper"])
    io.write_summary_json(out / "summary.json", {"command": "stability", "seed": cfg.base_seed, **rep.summary()})
    return rep.passed


def cmd_lp(cfg, model, out: Path) -> bool:
    _require_discrete(model, "lp")
    y = _observations(cfg, model, cfg.time)
    rep = lp_error_experiment(model, y, cfg.time, cfg.p, cfg.N_grid, cfg.M, cfg.base_seed, _h(cfg), threads=cfg.threads)
    rows = [[n, v, rep.reference, g] for n, v, g in zip(rep.n_grid, rep.values, rep.relative_gaps)]
    io.write_series_csv(out / "lp.csv", rows, ["N", "value", "reference", "relative_gap"])
    passed = rep.passed(cfg.thresholds.lp_tolerance)
    io.write_summary_json(
        out / "summary.json",
        {"command": "lp", "seed": cfg.base_seed, "tolerance": cfg.thresholds.lp_tolerance, "lp_pass": passed, **rep.summary()},
    )
    return passed


def cmd_forgetting(cfg, model, out: Path) -> bool:
    _require_discrete(model, "forgetting")
    y = _observations(cfg, model, cfg.n_max)
    rep = forgetting_experiment(model, y, cfg.chi_a, cfg.chi_b, level=cfg.thresholds.forgetting_level)
    rows = [[t, rep.tv_gap[t], rep.loglik_gap[t] if t < len(rep.loglik_gap) else None] for t in range(len(rep.tv_gap))]
    io.write_series_csv(out / "forgetting.csv", rows, ["time", "tv_gap", "loglik_gap"])
    io.write_summary_json(out / "summary.json", {"command": "forgetting", **rep.summary()})
    return rep.passed


def cmd_loglik_rate(cfg, model, out: Path) -> bool:
    rep = loglik_rate_experiment(model, build_source(cfg.source, model, cfg.base_seed), cfg.n_max)
    io.write_series_csv(out / "loglik_rate.csv", [[t + 1, v] for t, v in enumerate(rep.rate)], ["n", "rate"])
    io.write_summary_json(out / "summary.json", {"command": "loglik-rate", **rep.summary()})
    return True


_ASSUMPTION_KEYS = [f.name for f in dataclasses.fields(AssumptionConfig)]


def cmd_verify(cfg, model, out: Path) -> bool:
    options = dict(cfg.verify)
    doeblin = options.pop("doeblin", None)
    bad = [k for k in options if k not in _ASSUMPTION_KEYS]
    if bad:
        raise ConfigError([suggest_key(k, _ASSUMPTION_KEYS + ["doeblin"], "verify: ") for k in bad])
    for key in ("k_box", "c_box", "search_box"):
        if options.get(key) is not None:
            options[key] = tuple(options[key])
    if options.get("d_boxes") is not None:
        options["d_boxes"] = [tuple(b) for b in options["d_boxes"]]
    options.setdefault("seed", cfg.base_seed)
    y = _observations(cfg, model, cfg.n_max)
    report = check_assumptions(model, y, AssumptionConfig(**options))
    text = [report.to_text()]
    if doeblin is not None:
        try:
            cert = local_doeblin_constants(model, doeblin["lower"], doeblin["upper"], int(doeblin.get("grid_points", 33)))
            text.append(
                "[local-doeblin]\n"
                f"status = pass\neps_minus = {cert.eps_minus:.17g}\neps_plus = {cert.eps_plus:.17g}\n"
                f"ratio = {cert.ratio:.17g}\ngrid_points = {cert.grid_points}\n"
                "evidence = grid extremes over C x C (inf is an upper bound, sup a lower bound)\n"
            )
        except ModelError as exc:
            text.append(f"[local-doeblin]\nstatus = fail\nevidence = {exc}\n")
            report.checks.append(CheckResult("local-doeblin", "fail", evidence=str(exc)))
    if isinstance(model, LinearGaussianModel):
        st = lgss_structure(model, options.get("r_max", 5))
        io.write_series_csv(
            out / "lgss_structure.csv",
            [[n + 1, st.obs_ranks[n], st.ctrl_ranks[n], st.f_min_eigs[n]] for n in range(len(st.obs_ranks))],
            ["n", "obs_rank", "ctrl_rank", "f_min_eig"],
        )
    io.write_text(out / "assumptions.txt", "\n".join(text))
    io.write_summary_json(
        out / "summary.json",
        {"command": "verify", "checks": {c.name: c.status for c in report.checks}, "verify_pass": report.passed},
    )
    return report.passed


HANDLERS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "variance": cmd_variance,
    "stability": cmd_stability,
    "lp": cmd_lp,
    "forgetting": cmd_forgetting,
    "loglik-rate": cmd_loglik_rate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcstab", description="Particle filter stability experiments.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="base seed, 0 <= seed < 2^64 (overrides the config)")
    parser.add_argument("--threads", type=int, help="worker threads for replicate ensembles")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError([f"--seed: must lie in [0, 2^64), got {args.seed}"])
        if args.threads is not None and args.threads < 1:
            raise ConfigError([f"--threads: must be >= 1, got {args.threads}"])
        cfg = load_config(args.config).with_overrides(args.out, args.seed, args.threads)
        if cfg.command != args.command:
            raise ConfigError([f"command: config is for {cfg.command!r}, invoked as {args.command!r}"])
        model = load_model(cfg.model)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        passed = HANDLERS[args.command](cfg, model, out)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegeneracyError, ModelError, InputError, ValueError) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"{args.command}: {'pass' if passed else 'fail'} -> {out}")
    return EXIT_PASS if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
