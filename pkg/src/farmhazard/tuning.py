"""Regularization grids and cross-validated choice of lambda.

The held-out score of fold ``k`` at a coefficient vector ``theta`` is the
partial likelihood contribution ``l(theta) - l_{-k}(theta)``: the full-data
log partial likelihood minus the training-fold log partial likelihood.
Scores are summed over folds and the largest sum wins. Two criteria differ
in which ``theta`` is scored:

``"deviance"``
    the penalized fit on the training folds.
``"sparse"``
    the unpenalized refit on the support selected by the penalized fit
    (factor coordinates included). Shrinkage bias no longer rewards small
    penalties, so the criterion targets the support rather than the
    prediction error of the shrunken fit.

The rule then picks a grid point from the summed curve: ``"max"`` takes
the maximizer, ``"1se"`` the largest lambda whose score is within one
standard error (across folds) of the maximum.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .cox import CoxError, SortedDesign
from .data import SurvivalDataset, build_failure_index, dataset_index
from .solver import (ENET_ALPHA, SolverError, WeightSpec, _solve, _weights_at, fit_path, lambda_max,
                     normalize_method, procedure_design)


class TuningError(RuntimeError):
    pass


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("lambda grid must be a nonempty vector")
        if v.size > 1 and np.any(np.diff(v) >= 0):
            raise ValueError("lambda grid must be strictly decreasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)

    @property
    def lambda_max(self) -> float:
        return float(self.values[0])


def lambda_grid(design, index=None, alpha: float = 1.0, weights: WeightSpec = None,
                n_lambda: int = 100, eps: Optional[float] = None) -> LambdaGrid:
    """Log-spaced grid from ``lambda_max`` (empty penalized support) downward."""
    sd = design if isinstance(design, SortedDesign) else SortedDesign(design, index)
    w = _weights_at(weights, np.inf, sd.d) if callable(weights) else _weights_at(weights, 0.0, sd.d)
    lmax = lambda_max(sd, alpha, w)
    if lmax <= 0:
        warnings.warn("penalized score is identically zero at the null model; degenerate grid", RuntimeWarning)
        return LambdaGrid(np.array([0.0]))
    if eps is None:
        eps = 0.01 if sd.n < int(np.sum(w > 0)) else 1e-4
    if n_lambda == 1:
        return LambdaGrid(np.array([lmax]))
    return LambdaGrid(lmax * np.logspace(0.0, np.log10(eps), n_lambda))


def stratified_folds(delta, k_folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold labels with events and censored samples spread evenly."""
    delta = np.asarray(delta)
    folds = np.empty(len(delta), dtype=np.int64)
    offset = 0
    for status in (1, 0):
        idx = np.flatnonzero(delta == status)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (np.arange(len(idx)) + offset) % k_folds
        offset = (offset + len(idx)) % k_folds
    return folds


def log_partial_likelihood(sd: SortedDesign, theta) -> float:
    return -sd.n * sd.loss(theta)


CRITERIA = ("sparse", "deviance")
RULES = ("max", "1se")


@dataclass
class CVResult:
    lambda_star: float
    lambdas: np.ndarray
    cv_curve: np.ndarray
    folds: np.ndarray
    index_star: int
    full_path_theta: Optional[np.ndarray] = None
    criterion: str = "sparse"
    rule: str = "1se"
    cv_se: Optional[np.ndarray] = None


def support_refit(sd_train: SortedDesign, support) -> Optional[np.ndarray]:
    """Unpenalized coefficients on ``support`` (other coordinates zero), or ``None`` on failure."""
    support = np.asarray(support, dtype=int)
    theta = np.zeros(sd_train.d)
    if support.size == 0:
        return theta
    sub = SortedDesign(sd_train.ws[:, support], _identity_index(sd_train))
    try:
        sol, _, _, _, ok, _ = _solve(sub, 0.0, 1.0, np.zeros(support.size), np.zeros(support.size))
    except (SolverError, CoxError):
        return None
    if not ok:
        return None
    theta[support] = sol
    return theta


def _identity_index(sd: SortedDesign):
    # rows of sd.ws are already in failure order
    return replace(sd.index, order=np.arange(sd.n))


def _fold_scorer(criterion, sd_full, sd_train, weights, lambdas):
    cache = {}

    def score(i, theta):
        if criterion == "deviance":
            return log_partial_likelihood(sd_full, theta) - log_partial_likelihood(sd_train, theta)
        w = _weights_at(weights, lambdas[i], sd_train.d)
        support = np.flatnonzero((theta != 0) | (w == 0))
        key = support.tobytes()
        if key not in cache:
            refit = support_refit(sd_train, support)
            cache[key] = -np.inf if refit is None else (
                log_partial_likelihood(sd_full, refit) - log_partial_likelihood(sd_train, refit))
        return cache[key]

    return score


def cv_select_lambda(dataset: SurvivalDataset, method: Optional[str] = None, k_folds: int = 10,
                     grid=None, seed: int = 0, *, design=None, weights: WeightSpec = None,
                     alpha: Optional[float] = None, folds: Optional[np.ndarray] = None,
                     sorted_design: Optional[SortedDesign] = None, max_attempts: int = 10,
                     criterion: str = "sparse", rule: str = "1se",
                     dev_ratio_stop: Optional[float] = 0.999, patience: Optional[int] = 20) -> CVResult:
    """Pick lambda by K-fold cross-validated partial likelihood.

    Either ``method`` (one of the plain or factor-augmented procedures,
    without LLA reweighting) or an explicit ``design`` with ``weights`` is
    required. ``folds`` overrides the stratified random assignment. A fold's
    path stops once its held-out score has not improved for ``patience``
    consecutive grid points (``None`` fits the whole grid). Ties go to the
    larger lambda. ``rule="1se"`` takes the largest lambda whose summed
    score is within one standard error (``sqrt(K)`` times the across-fold
    standard deviation at the maximum) of the best.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    if design is None:
        if method is None:
            raise ValueError("give either method or design")
        method = normalize_method(method)
        if method in ("scad", "farmhazard_s"):
            raise ValueError("LLA procedures need their initializer; use fit_procedure")
        design, weights, _ = procedure_design(method, dataset.x)
        if alpha is None:
            alpha = ENET_ALPHA if method == "elastic_net" else 1.0
    alpha = 1.0 if alpha is None else alpha
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    design = np.asarray(design, dtype=float)
    sd = sorted_design if sorted_design is not None else SortedDesign(design, dataset_index(dataset))
    if grid is None:
        grid = lambda_grid(sd, alpha=alpha, weights=weights)
    lambdas = np.asarray(grid.values if isinstance(grid, LambdaGrid) else grid, dtype=float)
    if lambdas.size == 1:
        return CVResult(float(lambdas[0]), lambdas, np.zeros(1), np.zeros(dataset.n, dtype=int), 0,
                        None, criterion, rule)

    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        labels = stratified_folds(dataset.delta, k_folds, rng) if folds is None else np.asarray(folds)
        if all(dataset.delta[labels != f].sum() > 0 for f in range(k_folds)):
            break
        if folds is not None:
            raise TuningError("a training fold has no events")
    else:
        raise TuningError(f"could not form {k_folds} folds with events in every training set")

    scores = []
    for f in range(k_folds):
        train = np.flatnonzero(labels != f)
        tr_index = build_failure_index(dataset.z[train], dataset.delta[train])
        sd_tr = SortedDesign(design[train], tr_index)
        score = _fold_scorer(criterion, sd, sd_tr, weights, lambdas)
        fold_scores = []

        def stop(i, th):
            fold_scores.append(score(i, th))
            return patience is not None and i - int(np.argmax(fold_scores)) >= patience

        fit_path(sd_tr, lambdas, alpha, weights, dev_ratio_stop=dev_ratio_stop, stop=stop)
        scores.append(np.array(fold_scores))
    m = min(len(s) for s in scores)
    table = np.array([s[:m] for s in scores])
    curve = table.sum(axis=0)
    with np.errstate(invalid="ignore"):
        se = np.sqrt(k_folds) * table.std(axis=0, ddof=1)
    best = int(np.argmax(curve))
    if rule == "1se" and np.isfinite(se[best]):
        best = int(np.flatnonzero(curve >= curve[best] - se[best])[0])
    full = fit_path(sd, lambdas[: best + 1], alpha, weights, dev_ratio_stop=None)
    return CVResult(float(lambdas[best]), lambdas[:m], curve, labels, best, full.thetas[-1].copy(),
                    criterion, rule, se)
