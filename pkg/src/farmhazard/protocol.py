"""Out-of-sample evaluation by repeated train/test splits.

Each repeat screens on the training part only, fits the requested
procedures on the screened columns and scores the test part by C-index.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import DataError, SurvivalDataset, impute_median, standardize
from .metrics import MetricError, c_index
from .screening import screen
from .solver import ProcedureFit, fit_procedure, normalize_method

DEFAULT_METHODS = ("farmhazard_l", "farmhazard_s", "lasso")


@dataclass(frozen=True)
class PreparedData:
    dataset: SurvivalDataset
    dropped_rows: tuple
    dropped_columns: tuple


def prepare(dataset: SurvivalDataset) -> PreparedData:
    """Median imputation, removal of zero follow-up rows, then column standardization."""
    ds = impute_median(dataset)
    zero = ds.zero_time_rows()
    if zero.size:
        ds = ds.subset(np.setdiff1d(np.arange(ds.n), zero))
    x, rec = standardize(ds.x)
    names = [ds.names()[j] for j in rec.kept]
    return PreparedData(ds.with_x(x, names), tuple(int(i) for i in zero),
                        tuple(ds.names()[j] for j in rec.dropped_constant_columns))


def effective_weights(fit: ProcedureFit) -> np.ndarray:
    """Coefficients ``c`` with ``risk_scores(x) = x @ c + const``.

    For factor-augmented fits the factor projection is linear, so the
    ``(u, f)`` model collapses to a single weight vector on the raw columns.
    """
    dec = fit.decomposition
    if dec is None or dec.k == 0:
        return fit.beta.copy()
    b = dec.b_hat
    proj = np.linalg.lstsq(b.T @ b, (fit.gamma - b.T @ fit.beta), rcond=None)[0]
    return fit.beta + b @ proj


def split_rows(n: int, train_fraction: float, rng: np.random.Generator):
    if not 0 < train_fraction < 1:
        raise ValueError(f"split fraction must lie in (0, 1), got {train_fraction}")
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    if n_train < 2 or n - n_train < 2:
        raise DataError(f"split {train_fraction} of {n} rows leaves fewer than two rows on one side")
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _fit_all(train: SurvivalDataset, methods, cv_folds, seed):
    fits: Dict[str, ProcedureFit] = {}
    for m in methods:
        init = None
        if m == "farmhazard_s" and "farmhazard_l" in fits:
            init = fits["farmhazard_l"].beta
        elif m == "scad" and "lasso" in fits:
            init = fits["lasso"].beta
        k = fits["farmhazard_l"].k if m == "farmhazard_s" and "farmhazard_l" in fits else None
        fits[m] = fit_procedure(m, train, k=k, initializer=init, cv_folds=cv_folds, seed=seed)
    return fits


def evaluate_split(ds: SurvivalDataset, train_rows, test_rows, methods=DEFAULT_METHODS, *,
                   screen_top: Optional[int] = 1500, cv_folds: int = 10, seed: int = 0) -> dict:
    """C-index of each method on one split; returns ``{"c_index": {...}, "size": {...}, "columns": [...]}``."""
    train, test = ds.subset(train_rows), ds.subset(test_rows)
    train.require_events()
    cols = np.arange(ds.p)
    if screen_top is not None and screen_top < ds.p:
        cols = screen(train, top_d=screen_top).selected
    tr = train.with_x(train.x[:, cols])
    fits = _fit_all(tr, methods, cv_folds, seed)
    out = {"c_index": {}, "size": {}, "columns": cols.tolist()}
    for m, fit in fits.items():
        try:
            out["c_index"][m] = c_index(fit.risk_scores(test.x[:, cols]), test.z, test.delta)
        except MetricError:
            out["c_index"][m] = float("nan")
        out["size"][m] = int(np.count_nonzero(fit.beta))
    return out


@dataclass
class SplitReport:
    methods: tuple
    per_repeat: List[dict] = field(default_factory=list)

    def c_index_table(self) -> np.ndarray:
        return np.array([[r["c_index"][m] for m in self.methods] for r in self.per_repeat])

    def summary(self) -> Dict[str, dict]:
        tab = self.c_index_table()
        out = {}
        for j, m in enumerate(self.methods):
            v = tab[:, j][np.isfinite(tab[:, j])]
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
            out[m] = {"mean": float(v.mean()) if v.size else float("nan"), "se": se, "n": int(v.size)}
        return out


def repeated_split(dataset: SurvivalDataset, *, train_fraction: float = 0.8, repeats: int = 100, seed: int = 0,
                   methods: Sequence[str] = DEFAULT_METHODS, screen_top: Optional[int] = 1500,
                   cv_folds: int = 10, progress=None) -> SplitReport:
    """Repeated random splits on an already prepared dataset (see :func:`prepare`).

    Repeat ``r`` draws its split and CV seed from ``SeedSequence([seed, r])``.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    methods = tuple(normalize_method(m) for m in methods)
    report = SplitReport(methods)
    for r in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        tr, te = split_rows(dataset.n, train_fraction, rng)
        cv_seed = int(rng.integers(2**31 - 1))
        res = evaluate_split(dataset, tr, te, methods, screen_top=screen_top, cv_folds=cv_folds, seed=cv_seed)
        res["repeat"] = r
        res["test_rows"] = te.tolist()
        report.per_repeat.append(res)
        if progress is not None:
            progress(r + 1, repeats)
    return report
