"""Factor-augmented marginal screening and the plain SIS baseline.

Each covariate's idiosyncratic part is fitted together with the estimated
factors in a small unpenalized Cox model; covariates are ranked by the
absolute marginal coefficient. The SIS baseline fits each raw covariate
alone.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .cox import SortedDesign
from .data import DataError, SurvivalDataset, dataset_index
from .factors import decompose, estimate_num_factors_act


class ScreeningFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScreeningResult:
    beta_marginal: np.ndarray
    ranking: np.ndarray
    selected: np.ndarray
    k: int = 0
    failed: tuple = ()


def _newton_cox(sd: SortedDesign, max_steps: int = 100, max_halvings: int = 30, gtol: float = 1e-8):
    theta = np.zeros(sd.d)
    eta = np.zeros(sd.n)
    loss, g_eta, ea, _ = sd.derivatives_eta(eta)
    for _ in range(max_steps):
        grad = sd.wt @ g_eta
        if np.max(np.abs(grad)) < gtol:
            return theta
        hess = sd.wt @ sd.hess_times(eta, ea, sd.ws)
        hess = (hess + hess.T) / 2
        try:
            step = linalg.solve(hess, -grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(hess, -grad)[0]
        dstep = sd.ws @ step
        t = 1.0
        slack = 1e-12 * max(1.0, abs(loss))  # near the optimum the decrease is below roundoff
        for _ in range(max_halvings + 1):
            cand = eta + t * dstep
            new_loss = sd.loss_eta(cand)
            if np.isfinite(new_loss) and new_loss <= loss + slack:
                break
            t *= 0.5
        else:
            raise ScreeningFitError("step-halving failed to decrease the partial likelihood")
        theta = theta + t * step
        eta = cand
        loss, g_eta, ea, _ = sd.derivatives_eta(eta)
    if np.max(np.abs(sd.wt @ g_eta)) < gtol:
        return theta
    raise ScreeningFitError(f"no convergence after {max_steps} Newton steps")


def marginal_augmented_fit(u_col, f_hat, index, *, max_steps: int = 100, gtol: float = 1e-8):
    """Unpenalized Cox MLE on ``(u_col, f_hat)``; returns ``(beta_j, gamma_j)``."""
    u_col = np.asarray(u_col, dtype=float).reshape(-1, 1)
    f_hat = np.asarray(f_hat, dtype=float).reshape(u_col.shape[0], -1)
    if not np.any(u_col):
        if f_hat.shape[1] == 0:
            return 0.0, np.zeros(0)
        gamma = _newton_cox(SortedDesign(f_hat, index), max_steps=max_steps, gtol=gtol)
        return 0.0, gamma
    theta = _newton_cox(SortedDesign(np.hstack([u_col, f_hat]), index), max_steps=max_steps, gtol=gtol)
    return float(theta[0]), theta[1:]


def _standardize_cols(a):
    a = np.asarray(a, dtype=float)
    c = a - a.mean(axis=0)
    sd = c.std(axis=0, ddof=1) if a.shape[0] > 1 else np.zeros(a.shape[1])
    tiny = sd <= 1e-12 * max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    out = np.where(tiny, 0.0, c / np.where(tiny, 1.0, sd))
    return out


def _select(scores, top_d, threshold):
    if (top_d is None) == (threshold is None):
        raise ValueError("give exactly one of top_d or threshold")
    p = scores.size
    key = np.where(np.isnan(scores), -np.inf, scores)
    ranking = np.lexsort((np.arange(p), -key))
    if top_d is not None:
        if not 0 <= top_d <= p:
            raise ValueError(f"top_d={top_d} outside [0, {p}]")
        selected = np.sort(ranking[:top_d])
    else:
        selected = np.flatnonzero(key >= threshold)
    return ranking, selected


def _marginal_scores(ds: SurvivalDataset, columns, factors):
    index = dataset_index(ds)
    out = np.full(columns.shape[1], np.nan)
    failed = []
    for j in range(columns.shape[1]):
        try:
            b, _ = marginal_augmented_fit(columns[:, j], factors, index)
            out[j] = abs(b)
        except ScreeningFitError:
            failed.append(j)
    if failed:
        warnings.warn(f"{len(failed)} marginal fits failed; ranked last", RuntimeWarning)
    return out, tuple(failed)


def screen(dataset: SurvivalDataset, k: Optional[int] = None, *, top_d: Optional[int] = None,
           threshold: Optional[float] = None) -> ScreeningResult:
    """Factor-augmented screening.

    Decomposes the covariates (``k`` from ACT when omitted), standardizes
    the idiosyncratic and factor columns, fits each ``(u_j, f)`` marginal
    Cox model and ranks by ``|beta_j|``. Ties rank by ascending index.
    """
    dataset.require_events()
    x = dataset.x
    if k is None:
        k = estimate_num_factors_act(x)
    dec = decompose(x, k)
    u = _standardize_cols(dec.u_hat)
    f = _standardize_cols(dec.f_hat)
    scores, failed = _marginal_scores(dataset, u, f)
    ranking, selected = _select(scores, top_d, threshold)
    return ScreeningResult(scores, ranking, selected, dec.k, failed)


def sis_baseline(dataset: SurvivalDataset, *, top_d: Optional[int] = None,
                 threshold: Optional[float] = None) -> ScreeningResult:
    """Sure independence screening by univariate Cox fits on standardized covariates."""
    dataset.require_events()
    if dataset.p == 0:
        raise DataError("no covariates to screen")
    x = _standardize_cols(dataset.x)
    scores, failed = _marginal_scores(dataset, x, np.zeros((dataset.n, 0)))
    ranking, selected = _select(scores, top_d, threshold)
    return ScreeningResult(scores, ranking, selected, 0, failed)
