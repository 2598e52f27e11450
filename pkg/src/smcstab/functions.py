"""Named catalog of bounded test functions ``h``.

Specs are strings such as ``indicator(0)``, ``coordinate(1)`` or
``bounded-sigmoid(0, 2.5)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = ["TestFunction", "indicator", "coordinate", "bounded_sigmoid", "parse_test_function"]

_HERMITE = np.polynomial.hermite_e.hermegauss(80)


def _column(particles: np.ndarray, i: int) -> np.ndarray:
    particles = np.asarray(particles)
    if particles.ndim == 1:
        if i != 0:
            raise IndexError(f"scalar states have no coordinate {i}")
        return particles.astype(float)
    return particles[:, i].astype(float)


@dataclass(frozen=True)
class TestFunction:
    """A labelled function evaluated on an array of particles."""

    __test__ = False  # not a pytest class

    kind: str
    index: int
    scale: float = 1.0

    @property
    def label(self) -> str:
        if self.kind == "bounded-sigmoid":
            return f"bounded-sigmoid({self.index},{self.scale:g})"
        return f"{self.kind}({self.index})"

    def __call__(self, particles) -> np.ndarray:
        if self.kind == "indicator":
            p = np.asarray(particles)
            return (p == self.index).astype(float) if p.ndim == 1 else np.all(p == self.index, axis=1).astype(float)
        x = _column(particles, self.index)
        if self.kind == "coordinate":
            return x
        return 1.0 / (1.0 + np.exp(-x / self.scale))

    def as_vector(self, m: int) -> np.ndarray:
        """Values on the finite state space ``0..m-1``."""
        return self(np.arange(m))

    def gaussian_mean(self, mean, cov) -> float | None:
        """Expectation under ``N(mean, cov)``; ``None`` when not available."""
        if self.kind == "indicator":
            return None
        mu = float(np.atleast_1d(mean)[self.index])
        if self.kind == "coordinate":
            return mu
        sd = float(np.sqrt(max(np.atleast_2d(cov)[self.index, self.index], 0.0)))
        nodes, weights = _HERMITE
        vals = 1.0 / (1.0 + np.exp(-(mu + sd * nodes) / self.scale))
        return float(weights @ vals / weights.sum())


def indicator(state: int) -> TestFunction:
    return TestFunction("indicator", int(state))


def coordinate(i: int) -> TestFunction:
    return TestFunction("coordinate", int(i))


def bounded_sigmoid(i: int, scale: float = 1.0) -> TestFunction:
    if scale <= 0:
        raise ValueError("sigmoid scale must be positive")
    return TestFunction("bounded-sigmoid", int(i), float(scale))


_SPEC = re.compile(r"^\s*(indicator|coordinate|bounded-sigmoid)\s*\(\s*([^)]*)\)\s*$")


def parse_test_function(spec: str) -> TestFunction:
    match = _SPEC.match(spec)
    if not match:
        raise ValueError(f"unknown test function {spec!r}; expected indicator(i), coordinate(i) or bounded-sigmoid(i, scale)")
    kind, args = match.group(1), [a.strip() for a in match.group(2).split(",") if a.strip()]
    try:
        if kind == "bounded-sigmoid":
            if len(args) not in (1, 2):
                raise ValueError
            return bounded_sigmoid(int(args[0]), float(args[1]) if len(args) == 2 else 1.0)
        if len(args) != 1:
            raise ValueError
        return indicator(int(args[0])) if kind == "indicator" else coordinate(int(args[0]))
    except ValueError:
        raise ValueError(f"bad arguments in test function {spec!r}") from None
