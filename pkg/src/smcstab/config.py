"""Experiment configuration files (YAML) and model files.

Validation collects every problem before failing so one run reports them all.
Relative paths inside a config resolve against the config file's directory.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError, ModelError
from .functions import TestFunction, parse_test_function
from .models import (
    Ar1Source,
    DiscreteHmm,
    HmmSource,
    LinearGaussianModel,
    ReplaySource,
    arch_model,
    gaussian_random_walk,
    stationary_distribution,
)
from .stability import DEFAULT_LEVEL, DEFAULT_RATIO_MAX, ENVELOPE_LEVEL

__all__ = [
    "COMMANDS",
    "ExperimentConfig",
    "Thresholds",
    "load_config",
    "load_model",
    "build_source",
    "suggest_key",
]

COMMANDS = ("simulate", "filter", "variance", "stability", "lp", "forgetting", "loglik-rate", "verify")

REQUIRED = {
    "simulate": ("model", "n_max"),
    "filter": ("model", "source", "N", "n_max", "h"),
    "variance": ("model", "source", "N", "M", "h", "times"),
    "stability": ("model", "source", "N", "n_max", "h"),
    "lp": ("model", "source", "N_grid", "M", "h", "p", "time"),
    "forgetting": ("model", "source", "n_max", "chi_a", "chi_b"),
    "loglik-rate": ("model", "source", "n_max"),
    "verify": ("model", "source", "n_max"),
}

SOURCE_KINDS = {
    "hmm": {"kind", "seed"},
    "ar1": {"kind", "phi", "noise_sd", "thresholds", "seed"},
    "replay": {"kind", "path", "dtype"},
    "fixed": {"kind", "values"},
}


@dataclass(frozen=True)
class Thresholds:
    level: float = DEFAULT_LEVEL
    ratio_max: float = DEFAULT_RATIO_MAX
    envelope_level: float = ENVELOPE_LEVEL
    forgetting_level: float = 0.99
    lp_tolerance: float = 0.10


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    model: Optional[Path] = None
    source: Optional[dict] = None
    N: Optional[int] = None
    M: int = 500
    n_max: Optional[int] = None
    p: Optional[float] = None
    h: tuple[str, ...] = ()
    base_seed: int = 0
    out: Path = Path("out")
    thresholds: Thresholds = field(default_factory=Thresholds)
    times: tuple[int, ...] = ()
    N_grid: tuple[int, ...] = ()
    time: Optional[int] = None
    chi_a: Optional[tuple[float, ...]] = None
    chi_b: Optional[tuple[float, ...]] = None
    threads: int = 1
    verify: dict = field(default_factory=dict)

    def test_functions(self) -> list[TestFunction]:
        return [parse_test_function(s) for s in self.h]

    def with_overrides(self, out=None, seed=None, threads=None) -> "ExperimentConfig":
        changes = {}
        if out is not None:
            changes["out"] = Path(out)
        if seed is not None:
            changes["base_seed"] = int(seed)
        if threads is not None:
            changes["threads"] = int(threads)
        return replace(self, **changes)


_KEYS = [f.name for f in fields(ExperimentConfig)]
_THRESHOLD_KEYS = [f.name for f in fields(Thresholds)]
_POSITIVE_INTS = ("N", "M", "n_max", "threads")
_U64 = 2**64


def suggest_key(key: str, valid, where: str = "") -> str:
    """Diagnostic for an unknown key, naming the closest valid key when one is near."""
    close = difflib.get_close_matches(key, list(valid), n=1, cutoff=0.5)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return f"{where}unknown key {key!r}{hint}"


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_distribution(name: str, v, errors: list[str]):
    if not isinstance(v, list) or not v or not all(_is_num(x) for x in v):
        errors.append(f"{name}: expected a list of probabilities")
        return None
    arr = np.asarray(v, dtype=float)
    if np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-12:
        errors.append(f"{name}: entries must be nonnegative and sum to 1")
        return None
    return tuple(float(x) for x in arr)


def _check_source(src, base: Path, errors: list[str]):
    if not isinstance(src, dict) or "kind" not in src:
        errors.append("source: expected a mapping with a 'kind' key")
        return None
    kind = src["kind"]
    if kind not in SOURCE_KINDS:
        errors.append(f"source.kind: {kind!r} is not one of {sorted(SOURCE_KINDS)}")
        return None
    for key in src:
        if key not in SOURCE_KINDS[kind]:
            errors.append(suggest_key(key, SOURCE_KINDS[kind], "source: "))
    out = dict(src)
    if kind == "ar1":
        if not _is_num(src.get("phi")):
            errors.append("source.phi: required number")
        elif not abs(src["phi"]) < 1:
            errors.append("source.phi: must satisfy |phi| < 1")
    if kind == "replay":
        if not isinstance(src.get("path"), str):
            errors.append("source.path: required string")
        else:
            out["path"] = str((base / src["path"]).resolve())
    if kind == "fixed":
        vals = src.get("values")
        if not isinstance(vals, list) or not vals:
            errors.append("source.values: required non-empty list")
    if "seed" in src and not (_is_int(src["seed"]) and 0 <= src["seed"] < _U64):
        errors.append("source.seed: must be an integer in [0, 2^64)")
    return out


def _mark(node) -> str:
    return f" (line {node.start_mark.line + 1})" if node is not None else ""


def _parse_yaml(path: Path):
    """Parsed mapping plus a ``key -> line`` table for diagnostics."""
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigError([f"{path}: YAML parse error{where}: {getattr(exc, 'problem', exc)}"]) from None
    lines = {}
    if isinstance(root, yaml.MappingNode):
        for k, _ in root.value:
            lines[k.value] = k
    return data, lines


def load_config(path) -> ExperimentConfig:
    """Read and validate an experiment config; raise :class:`ConfigError` listing all violations."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    data, lines = _parse_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    base = path.parent
    errors: list[str] = []
    for key in data:
        if key not in _KEYS:
            errors.append(suggest_key(str(key), _KEYS, "") + _mark(lines.get(key)))

    command = data.get("command")
    if command not in COMMANDS:
        errors.append(f"command: {command!r} is not one of {list(COMMANDS)}")
        raise ConfigError(errors)
    for key in REQUIRED[command]:
        if data.get(key) is None:
            errors.append(f"{key}: required for command {command!r}")

    values: dict[str, Any] = {"command": command}
    for key in _POSITIVE_INTS:
        if data.get(key) is not None:
            v = data[key]
            if not _is_int(v) or v < 1:
                errors.append(f"{key}: must be an integer >= 1, got {v!r}" + _mark(lines.get(key)))
            else:
                values[key] = int(v)
    if "base_seed" in data:
        v = data["base_seed"]
        if not _is_int(v) or not 0 <= v < _U64:
            errors.append(f"base_seed: must be an integer in [0, 2^64), got {v!r}")
        else:
            values["base_seed"] = int(v)
    if data.get("model") is not None:
        if not isinstance(data["model"], str):
            errors.append("model: expected a file path")
        else:
            model_path = (base / data["model"]).resolve()
            if not model_path.is_file():
                errors.append(f"model: file not found: {model_path}")
            values["model"] = model_path
    if data.get("source") is not None:
        values["source"] = _check_source(data["source"], base, errors)
    if data.get("p") is not None:
        if not _is_num(data["p"]) or data["p"] < 1:
            errors.append(f"p: must be a number >= 1, got {data['p']!r}")
        else:
            values["p"] = float(data["p"])
    if data.get("h") is not None:
        specs = data["h"] if isinstance(data["h"], list) else [data["h"]]
        for s in specs:
            try:
                parse_test_function(str(s))
            except ValueError as exc:
                errors.append(f"h: {exc}")
        values["h"] = tuple(str(s) for s in specs)
    for key in ("times", "N_grid"):
        if data.get(key) is not None:
            v = data[key]
            floor = 0 if key == "times" else 1
            if not isinstance(v, list) or not v or not all(_is_int(x) and x >= floor for x in v):
                errors.append(f"{key}: expected a non-empty list of integers >= {floor}")
            else:
                values[key] = tuple(int(x) for x in v)
    if data.get("time") is not None:
        if not _is_int(data["time"]) or data["time"] < 0:
            errors.append("time: must be an integer >= 0")
        else:
            values["time"] = int(data["time"])
    for key in ("chi_a", "chi_b"):
        if data.get(key) is not None:
            values[key] = _check_distribution(key, data[key], errors)
    if data.get("out") is not None:
        values["out"] = (base / str(data["out"])).resolve()
    if data.get("thresholds") is not None:
        th = data["thresholds"]
        if not isinstance(th, dict):
            errors.append("thresholds: expected a mapping")
        else:
            good = {}
            for k, v in th.items():
                if k not in _THRESHOLD_KEYS:
                    errors.append(suggest_key(str(k), _THRESHOLD_KEYS, "thresholds: "))
                elif not _is_num(v) or v <= 0:
                    errors.append(f"thresholds.{k}: must be a positive number")
                else:
                    good[k] = float(v)
            for k in ("level", "envelope_level", "forgetting_level"):
                if k in good and not good[k] < 1:
                    errors.append(f"thresholds.{k}: must lie in (0, 1)")
            values["thresholds"] = Thresholds(**good)
    if data.get("verify") is not None:
        if not isinstance(data["verify"], dict):
            errors.append("verify: expected a mapping")
        else:
            values["verify"] = dict(data["verify"])
    if command == "variance" and "times" in values and data.get("n_max") is None:
        values["n_max"] = max(values["times"]) + 1
    if command == "lp" and "time" in values and data.get("n_max") is None:
        values["n_max"] = values["time"]
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(**values)


# models and sources

_MODEL_KEYS = {
    "discrete": {"kind", "m", "k", "q", "g", "chi"},
    "lgss": {"kind", "dx", "du", "dy", "a", "r", "b", "s", "init_mean", "init_cov"},
    "arch": {"kind", "a", "b0", "b1", "obs_sd", "init_sd"},
    "random-walk": {"kind", "step_sd", "obs_sd", "init_sd"},
}


def _shape(name: str, arr, shape, errors: list[str]):
    a = np.asarray(arr, dtype=float)
    if a.shape != tuple(shape):
        errors.append(f"{name}: expected shape {tuple(shape)}, got {a.shape}")
    return a


def load_model(path):
    """Build a model from a YAML file with explicit dimensions.

    ``kind`` is ``discrete`` (m, k, q, g, chi: list or ``stationary``),
    ``lgss`` (dx, du, dy, a, r, b, s, init_mean, init_cov), ``arch`` or
    ``random-walk`` (scalar parameters).
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"model file not found: {path}"])
    data, _ = _parse_yaml(path)
    if not isinstance(data, dict) or data.get("kind") not in _MODEL_KEYS:
        raise ConfigError([f"{path}: 'kind' must be one of {sorted(_MODEL_KEYS)}"])
    kind = data["kind"]
    errors = [suggest_key(str(k), _MODEL_KEYS[kind], f"{path}: ") for k in data if k not in _MODEL_KEYS[kind]]
    params = {k: v for k, v in data.items() if k != "kind"}
    try:
        if kind in ("arch", "random-walk"):
            if errors:
                raise ConfigError(errors)
            return arch_model(**params) if kind == "arch" else gaussian_random_walk(**params)
        if kind == "discrete":
            missing = [k for k in ("m", "k", "q", "g") if k not in data]
            if missing:
                raise ConfigError(errors + [f"{path}: missing {', '.join(missing)}"])
            m, k = int(data["m"]), int(data["k"])
            q = _shape("q", data["q"], (m, m), errors)
            g = _shape("g", data["g"], (m, k), errors)
            chi = data.get("chi", "stationary")
            if errors:
                raise ConfigError(errors)
            chi = stationary_distribution(q) if chi == "stationary" else _shape("chi", chi, (m,), errors)
            if errors:
                raise ConfigError(errors)
            return DiscreteHmm(q=q, g=g, chi=chi)
        missing = [k for k in _MODEL_KEYS["lgss"] - {"kind"} if k not in data]
        if missing:
            raise ConfigError(errors + [f"{path}: missing {', '.join(sorted(missing))}"])
        dx, du, dy = int(data["dx"]), int(data["du"]), int(data["dy"])
        arrays = dict(
            a=_shape("a", data["a"], (dx, dx), errors),
            r=_shape("r", data["r"], (dx, du), errors),
            b=_shape("b", data["b"], (dy, dx), errors),
            s=_shape("s", data["s"], (dy, dy), errors),
            init_mean=_shape("init_mean", data["init_mean"], (dx,), errors),
            init_cov=_shape("init_cov", data["init_cov"], (dx, dx), errors),
        )
        if errors:
            raise ConfigError(errors)
        return LinearGaussianModel(**arrays)
    except (ModelError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError([f"{path}: {exc}"]) from None


def build_source(spec: dict, model, default_seed: int):
    """Observation source from a validated ``source`` mapping; ``fixed`` yields an array."""
    kind = spec["kind"]
    seed = int(spec.get("seed", default_seed))
    if kind == "hmm":
        return HmmSource(model, seed)
    if kind == "ar1":
        th = spec.get("thresholds")
        return Ar1Source(float(spec["phi"]), float(spec.get("noise_sd", 1.0)), None if th is None else tuple(th), seed)
    if kind == "replay":
        return ReplaySource(spec["path"], spec.get("dtype", "auto"))
    return np.asarray(spec["values"])
