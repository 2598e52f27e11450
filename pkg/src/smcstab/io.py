"""CSV, JSON and text writers for experiment outputs.

Floats are written with 17 significant digits, which round-trips every
double exactly. Column layouts per command are listed in ``docs/csv_schemas.md``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exact import VarianceSeries
from .smc import ReplicateRecord

__all__ = [
    "RECORD_SCHEMA",
    "format_value",
    "write_series_csv",
    "read_series_csv",
    "variance_series_rows",
    "write_records_csv",
    "write_summary_json",
    "write_text",
]

RECORD_SCHEMA = ("replicate", "time", "estimator", "function", "value")


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _rows(series, schema: Sequence[str]) -> list[list]:
    if isinstance(series, Mapping):
        if list(series.keys()) != list(schema):
            raise ValueError(f"series columns {list(series.keys())} do not match schema {list(schema)}")
        cols = [np.asarray(series[k]) for k in schema]
        lengths = {len(c) for c in cols}
        if len(lengths) > 1:
            raise ValueError(f"series columns have unequal lengths {sorted(lengths)}")
        return [list(r) for r in zip(*cols)]
    rows = [list(r) for r in series]
    for i, r in enumerate(rows):
        if len(r) != len(schema):
            raise ValueError(f"row {i} has {len(r)} fields, schema has {len(schema)}")
    return rows


def write_series_csv(path, series, schema: Sequence[str]) -> None:
    """Write ``series`` (rows, or a ``column -> values`` mapping) under a header row.

    The whole series is validated against ``schema`` before the file is opened.
    """
    path = Path(path)
    rows = _rows(series, schema)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(schema)
            writer.writerows([format_value(v) for v in r] for r in rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _parse(token: str):
    if token == "":
        return math.nan
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def read_series_csv(path) -> tuple[list[str], dict[str, list]]:
    """Inverse of :func:`write_series_csv`: header and parsed columns."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols: dict[str, list] = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(_parse(v))
    return header, cols


def variance_series_rows(vs: VarianceSeries) -> tuple[tuple[str, ...], list[list]]:
    """``time, sigma2, sigma2_filter`` rows; the filter entry is blank at the final time."""
    n = len(vs.sigma2_filter)
    rows = [[t, float(vs.sigma2[t]), float(vs.sigma2_filter[t]) if t < n else None] for t in range(n + 1)]
    return ("time", "sigma2", "sigma2_filter"), rows


def _record_rows(records: Iterable[ReplicateRecord]):
    for rec in records:
        for label, vals in rec.pred.items():
            for t, v in enumerate(vals):
                yield [rec.replicate_id, t, "pred", label, v]
        for label, vals in rec.filt.items():
            for t, v in enumerate(vals):
                yield [rec.replicate_id, t, "filt", label, v]
        for t, v in enumerate(rec.loglik):
            yield [rec.replicate_id, t, "loglik", "", v]


def write_records_csv(path, records: Iterable[ReplicateRecord]) -> None:
    write_series_csv(path, list(_record_rows(records)), RECORD_SCHEMA)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_summary_json(path, summary: Mapping) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")


def write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n")
