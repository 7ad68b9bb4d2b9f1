"""Record cleaning, scaling, encoding and demand aggregation."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from statistics import median
from typing import Optional, Sequence

from ..engine import ConfigError


@dataclass
class CleanReport:
    duplicates_removed: int = 0
    dropped_missing_required: int = 0
    imputed_values: int = 0


def _is_missing(v) -> bool:
    if v is None:
        return True
    if isinstance(v, float) and math.isnan(v):
        return True
    return False


def clean(records: list[dict], required: Sequence[str] = ("user_id", "timestamp_s", "action"),
          numeric_fields: Sequence[str] = ()) -> tuple[list[dict], CleanReport]:
    """Drop exact duplicates and rows missing required fields; impute missing
    numeric fields with the column median. Idempotent."""
    report = CleanReport()
    seen = set()
    unique: list[dict] = []
    for rec in records:
        key = json.dumps(rec, sort_keys=True, default=str)
        if key in seen:
            report.duplicates_removed += 1
            continue
        seen.add(key)
        unique.append(rec)

    kept: list[dict] = []
    for rec in unique:
        if any(fld not in rec or _is_missing(rec.get(fld)) for fld in required):
            report.dropped_missing_required += 1
            continue
        kept.append(rec)

    for fld in numeric_fields:
        present = [rec[fld] for rec in kept if not _is_missing(rec.get(fld))]
        if not present:
            continue
        fill = median(present)
        patched = []
        for rec in kept:
            if _is_missing(rec.get(fld)):
                report.imputed_values += 1
                rec = dict(rec, **{fld: fill})  # copy, input records stay untouched
            patched.append(rec)
        kept = patched
    return kept, report


@dataclass(frozen=True)
class NormMeta:
    method: str
    offset: float   # min (min-max) or mean (z-score)
    scale: float    # range or standard deviation; 0 marks a constant column


def normalize(column: Sequence[float], method: str = "min-max") -> tuple[list[float], NormMeta]:
    """Scale a column to [0,1] (min-max) or mean 0 / sd 1 (z-score).

    A constant column maps to all-zeros under both methods, recorded in the
    metadata with scale 0 so the inverse still recovers the original.
    """
    if len(column) == 0:
        raise ConfigError("cannot normalize an empty column")
    vals = [float(v) for v in column]
    if any(not math.isfinite(v) for v in vals):
        raise ConfigError("column contains non-finite values")
    if method == "min-max":
        lo, hi = min(vals), max(vals)
        if hi == lo:
            return [0.0] * len(vals), NormMeta(method, lo, 0.0)
        return [(v - lo) / (hi - lo) for v in vals], NormMeta(method, lo, hi - lo)
    if method == "z-score":
        n = len(vals)
        mean = sum(vals) / n
        if n < 2:
            return [0.0] * n, NormMeta(method, mean, 0.0)
        sd = math.sqrt(sum((v - mean) ** 2 for v in vals) / (n - 1))
        if sd == 0.0:
            return [0.0] * n, NormMeta(method, mean, 0.0)
        return [(v - mean) / sd for v in vals], NormMeta(method, mean, sd)
    raise ConfigError(f"unknown normalization method {method!r}")


def denormalize(column: Sequence[float], meta: NormMeta) -> list[float]:
    if meta.scale == 0.0:
        return [meta.offset] * len(column)
    return [v * meta.scale + meta.offset for v in column]


class FeatureMatrix:
    """Named feature columns as one dense matrix, with per-column scaling
    metadata retained so values can be mapped back to their original units."""

    def __init__(self, names: list[str], matrix, scaling: dict[str, NormMeta]):
        import numpy as np

        self.names = list(names)
        self.matrix = np.asarray(matrix, dtype=float)
        self.scaling = dict(scaling)
        if self.matrix.ndim != 2 or self.matrix.shape[1] != len(self.names):
            raise ConfigError("feature matrix shape does not match its column names")
        if not np.all(np.isfinite(self.matrix)):
            raise ConfigError("feature matrix contains non-finite values")

    @classmethod
    def from_columns(cls, columns: dict[str, Sequence[float]],
                     method: str = "z-score") -> "FeatureMatrix":
        import numpy as np

        if not columns:
            raise ConfigError("feature matrix needs at least one column")
        lengths = {len(v) for v in columns.values()}
        if len(lengths) != 1:
            raise ConfigError("feature columns must share one length")
        names = list(columns)
        scaled, scaling = [], {}
        for name in names:
            vals, meta = normalize(columns[name], method)
            scaled.append(vals)
            scaling[name] = meta
        return cls(names, np.asarray(scaled).T, scaling)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    def column(self, name: str):
        return self.matrix[:, self.names.index(name)]


class OneHotEncoder:
    """Indicator columns over a fixed category set; unseen categories at
    transform time produce an all-zeros row and a warning."""

    def __init__(self):
        self.categories: list[str] = []

    def fit(self, values: Sequence[str]) -> "OneHotEncoder":
        seen = []
        for v in values:
            if v not in seen:
                seen.append(v)
        self.categories = sorted(seen)
        return self

    def transform(self, values: Sequence[str]) -> dict[str, list[int]]:
        cols = {c: [0] * len(values) for c in self.categories}
        for i, v in enumerate(values):
            if v in cols:
                cols[v][i] = 1
            else:
                warnings.warn(f"unseen category {v!r}; encoding as all-zeros", stacklevel=2)
        return cols


def one_hot(values: Sequence[str]) -> dict[str, list[int]]:
    return OneHotEncoder().fit(values).transform(values)


def aggregate(times: Sequence[float], interval_s: float, start_s: float = 0.0,
              horizon_s: Optional[float] = None):
    """Bin event times into half-open intervals [start + i*dt, start + (i+1)*dt)."""
    from .forecast import DemandSeries

    if interval_s <= 0:
        raise ConfigError("aggregation interval must be positive")
    if horizon_s is None:
        horizon_s = max(times) - start_s if len(times) else interval_s
    n_bins = max(1, math.ceil(horizon_s / interval_s - 1e-12))
    counts = [0] * n_bins
    for t in times:
        idx = int((t - start_s) / interval_s)
        if 0 <= idx < n_bins:
            counts[idx] += 1
    return DemandSeries(interval_s=interval_s, counts=counts, start_s=start_s)
