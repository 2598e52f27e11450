"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class ModelError(ValueError):
    """A model violates its structural or positivity requirements."""


class DimensionError(ModelError):
    """Arrays passed to a model have inconsistent shapes."""


class InputError(ValueError):
    """An input file is missing, unreadable or truncated."""


class DegeneracyError(RuntimeError):
    """A normalizer vanished: all particle weights or the exact likelihood are zero.

    ``time`` is the observation index at which it happened, ``replicate``
    the replicate id when raised from an ensemble.
    """

    def __init__(self, message: str, time: int | None = None, replicate: int | None = None):
        self.time = time
        self.replicate = replicate
        where = []
        if replicate is not None:
            where.append(f"replicate={replicate}")
        if time is not None:
            where.append(f"time={time}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)

    def with_replicate(self, replicate: int) -> "DegeneracyError":
        msg = str(self.args[0]).split(" (")[0]
        return DegeneracyError(msg, time=self.time, replicate=replicate)


class RankError(ModelError):
    """A covariance or block matrix needed for a density is singular."""


class ConfigError(ValueError):
    """Configuration failed validation; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
