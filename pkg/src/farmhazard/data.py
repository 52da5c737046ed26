"""Survival data containers, CSV ingestion and preprocessing.

Covariates are stored as a dense float matrix; missing cells are NaN until
:func:`impute_median` replaces them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MISSING_TOKENS = frozenset({"", "NA", "na", "NaN", "nan"})


class DataError(ValueError):
    """Malformed or unusable survival data."""


@dataclass(frozen=True)
class SurvivalDataset:
    z: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    column_names: Optional[tuple] = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).ravel()
        delta = np.asarray(self.delta).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if not (len(z) == len(delta) == x.shape[0]):
            raise DataError(
                f"length mismatch: z={len(z)}, delta={len(delta)}, x rows={x.shape[0]}"
            )
        if np.any(~np.isfinite(z)) or np.any(z < 0):
            raise DataError("observed times must be finite and nonnegative")
        if not np.all(np.isin(delta, (0, 1))):
            raise DataError("event indicators must be 0 or 1")
        names = self.column_names
        if names is not None:
            names = tuple(str(c) for c in names)
            if len(names) != x.shape[1]:
                raise DataError("column_names length does not match covariate count")
        for arr in (z, x):
            arr.setflags(write=False)
        delta = delta.astype(np.int8)
        delta.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.delta.sum())

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.x).any())

    def names(self) -> tuple:
        if self.column_names is not None:
            return self.column_names
        return tuple(f"x{j + 1}" for j in range(self.p))

    def zero_time_rows(self) -> np.ndarray:
        return np.flatnonzero(self.z == 0)

    def subset(self, rows) -> "SurvivalDataset":
        rows = np.asarray(rows)
        return SurvivalDataset(self.z[rows], self.delta[rows], self.x[rows], self.column_names)

    def with_x(self, x, column_names=None) -> "SurvivalDataset":
        return SurvivalDataset(self.z, self.delta, x, column_names)

    def require_events(self):
        if self.n_events == 0:
            raise DataError("dataset has no events; the partial likelihood is vacuous")


@dataclass(frozen=True)
class FailureIndex:
    """Sorted order and Breslow risk-set boundaries.

    ``order`` sorts samples by time ascending with events before censorings
    at tied times. ``risk_start[s]`` is the first sorted position whose time
    equals that of sorted position ``s``; every sample tied at a failure time
    therefore shares the same suffix risk set. ``dstart[s]`` counts the
    events whose risk set starts at sorted position ``s``.
    """

    order: np.ndarray
    failure_positions: np.ndarray
    risk_start: np.ndarray
    dstart: np.ndarray
    z_sorted: np.ndarray
    delta_sorted: np.ndarray

    @property
    def n(self) -> int:
        return len(self.order)

    @property
    def n_events(self) -> int:
        return len(self.failure_positions)

    def risk_set(self, j: int) -> np.ndarray:
        """Original sample indices at risk at the ``j``-th failure (0-based)."""
        s = self.failure_positions[j]
        return self.order[self.risk_start[s]:]

    def risk_set_sizes(self) -> np.ndarray:
        return self.n - self.risk_start[self.failure_positions]


def build_failure_index(z, delta) -> FailureIndex:
    z = np.asarray(z, dtype=float)
    delta = np.asarray(delta).astype(np.int64)
    if delta.sum() == 0:
        raise DataError("no events: cannot build a failure index")
    # lexsort uses the last key as primary
    order = np.lexsort((-delta, z))
    zs = z[order]
    ds = delta[order]
    n = len(zs)
    new_group = np.ones(n, dtype=bool)
    new_group[1:] = zs[1:] != zs[:-1]
    group_id = np.cumsum(new_group) - 1
    group_first = np.flatnonzero(new_group)
    risk_start = group_first[group_id]
    dstart = np.bincount(risk_start[ds == 1], minlength=n).astype(np.float64)
    out = FailureIndex(
        order=order,
        failure_positions=np.flatnonzero(ds == 1),
        risk_start=risk_start,
        dstart=dstart,
        z_sorted=zs,
        delta_sorted=ds,
    )
    for arr in (order, out.failure_positions, risk_start, dstart, zs, ds):
        arr.setflags(write=False)
    return out


def dataset_index(dataset: SurvivalDataset) -> FailureIndex:
    dataset.require_events()
    return build_failure_index(dataset.z, dataset.delta)


def _parse_number(cell: str, row: int, col: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
    if math.isnan(value):
        raise DataError(f"row {row}, column {col!r}: missing value")
    return value


def load_csv(
    path,
    time_col: str,
    status_col: str,
    covariate_cols: Optional[Sequence[str]] = None,
) -> SurvivalDataset:
    """Read a headed CSV into a :class:`SurvivalDataset`.

    Empty cells and ``NA`` in covariate columns become NaN. When
    ``covariate_cols`` is omitted every column other than time and status is
    used. Rows with zero follow-up are kept; see
    :meth:`SurvivalDataset.zero_time_rows`.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in (time_col, status_col):
            if col not in header:
                raise DataError(f"{path}: column {col!r} not found in header")
        if covariate_cols is None:
            covariate_cols = [h for h in header if h not in (time_col, status_col)]
        missing = [c for c in covariate_cols if c not in header]
        if missing:
            raise DataError(f"{path}: covariate columns not found: {missing}")
        ti, si = header.index(time_col), header.index(status_col)
        ci = [header.index(c) for c in covariate_cols]
        z, d, rows = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"row {lineno}: expected {len(header)} fields, got {len(rec)}")
            t = _parse_number(rec[ti].strip(), lineno, time_col)
            s = _parse_number(rec[si].strip(), lineno, status_col)
            if s not in (0.0, 1.0):
                raise DataError(f"row {lineno}, column {status_col!r}: status must be 0 or 1, got {rec[si]!r}")
            if t < 0:
                raise DataError(f"row {lineno}, column {time_col!r}: negative time {t}")
            vals = []
            for j in ci:
                cell = rec[j].strip()
                if cell in MISSING_TOKENS:
                    vals.append(np.nan)
                else:
                    vals.append(_parse_number(cell, lineno, header[j]))
            z.append(t)
            d.append(int(s))
            rows.append(vals)
    if not z:
        raise DataError(f"{path}: no data rows")
    x = np.array(rows, dtype=float).reshape(len(z), len(ci))
    return SurvivalDataset(np.array(z), np.array(d), x, tuple(covariate_cols))


def impute_median(dataset: SurvivalDataset) -> SurvivalDataset:
    x = np.array(dataset.x, copy=True)
    miss = np.isnan(x)
    if not miss.any():
        return dataset
    names = dataset.names()
    for j in np.flatnonzero(miss.any(axis=0)):
        col = x[:, j]
        observed = col[~miss[:, j]]
        if observed.size == 0:
            raise DataError(f"column {names[j]!r} has no observed values")
        col[miss[:, j]] = np.median(observed)
    return dataset.with_x(x, dataset.column_names)


@dataclass(frozen=True)
class StandardizationRecord:
    means: np.ndarray
    sds: np.ndarray
    dropped_constant_columns: tuple = field(default_factory=tuple)

    @property
    def kept(self) -> np.ndarray:
        keep = np.ones(len(self.means), dtype=bool)
        keep[list(self.dropped_constant_columns)] = False
        return np.flatnonzero(keep)

    def apply(self, x) -> np.ndarray:
        """Standardize new rows with the stored means and sds."""
        x = np.asarray(x, dtype=float)
        kept = self.kept
        return (x[:, kept] - self.means[kept]) / self.sds[kept]


def standardize(x, rtol: float = 1e-12):
    """Center and scale columns to sample sd one (``ddof=1``).

    Constant columns are dropped and listed in the returned record.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] < 2:
        raise DataError("standardize needs at least two rows")
    means = x.mean(axis=0)
    centered = x - means
    sds = centered.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(means), 1.0)
    constant = sds <= rtol * scale
    kept = ~constant
    out = centered[:, kept] / sds[kept]
    sds_rec = np.where(constant, 0.0, sds)
    return out, StandardizationRecord(means, sds_rec, tuple(int(j) for j in np.flatnonzero(constant)))
