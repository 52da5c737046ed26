"""Evaluation statistics: concordance, support recovery, Wilson intervals, screening rates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class BinomialCI:
    rate: float
    lower: float
    upper: float
    k: int
    n: int
    confidence: float = 0.95


def c_index(risk_scores, z, delta, chunk: int = 2048) -> float:
    """Harrell's concordance index.

    A pair is usable when the member with the shorter time had an event; at
    tied times it is usable only if exactly one member had an event, which
    is then treated as the earlier one. Higher risk should mean an earlier
    event. Risk ties count one half.
    """
    r = np.asarray(risk_scores, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    d = np.asarray(delta).ravel().astype(bool)
    n = r.size
    if n < 2 or z.size != n or d.size != n:
        raise MetricError("c_index needs at least two samples and equal-length inputs")
    conc = 0.0
    usable = 0
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        zi, di, ri = z[sl, None], d[sl, None], r[sl, None]
        earlier = di & ((zi < z) | ((zi == z) & ~d))
        usable += int(earlier.sum())
        conc += float(np.sum(earlier & (ri > r)) + 0.5 * np.sum(earlier & (ri == r)))
    if usable == 0:
        raise MetricError("no usable pairs: every comparable pair is censored first")
    return conc / usable


def sign_consistency(beta_hat, beta_star) -> bool:
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    if beta_hat.shape != beta_star.shape:
        raise MetricError(f"shape mismatch {beta_hat.shape} vs {beta_star.shape}")
    return bool(np.array_equal(np.sign(beta_hat), np.sign(beta_star)))


def model_size(beta_hat) -> int:
    return int(np.count_nonzero(np.asarray(beta_hat)))


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> BinomialCI:
    """Wilson score interval for a binomial proportion."""
    if n < 1 or not 0 <= k <= n:
        raise MetricError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    if not 0 < confidence < 1:
        raise MetricError("confidence must lie in (0, 1)")
    zq = stats.norm.ppf(0.5 + confidence / 2)
    p = k / n
    denom = 1 + zq * zq / n
    center = (p + zq * zq / (2 * n)) / denom
    half = zq * np.sqrt(p * (1 - p) / n + zq * zq / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return BinomialCI(p, float(lo), float(hi), int(k), int(n), confidence)


def mean_pm_2se(values) -> tuple:
    """Mean with the half-width of a +/- 2 standard error band."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else 0.0
    return float(v.mean()), float(2 * se)


def roc_curve_from_rankings(rankings: Sequence[Sequence[int]], true_support, p: int):
    """Mean (FPR, TPR) as the number of top-ranked covariates grows from 1 to ``p``."""
    s = np.zeros(p, dtype=bool)
    s[np.asarray(list(true_support), dtype=int)] = True
    n_pos, n_neg = int(s.sum()), p - int(s.sum())
    tpr = np.zeros(p)
    fpr = np.zeros(p)
    for rk in rankings:
        hits = s[np.asarray(rk, dtype=int)]
        tpr += np.cumsum(hits) / n_pos
        fpr += np.cumsum(~hits) / n_neg if n_neg else 0.0
    m = max(len(rankings), 1)
    return fpr / m, tpr / m


def screening_metrics(selected_sets: Iterable[Iterable[int]], true_support, p: int,
                      rankings: Optional[Sequence[Sequence[int]]] = None) -> dict:
    """Sure screening rate, mean false negative rate and (with rankings) the ROC points."""
    truth = set(int(j) for j in true_support)
    if not truth:
        raise MetricError("true support must be nonempty")
    sure, fnr = [], []
    for sel in selected_sets:
        sel = set(int(j) for j in sel)
        sure.append(truth <= sel)
        fnr.append(len(truth - sel) / len(truth))
    out = {
        "sure_rate": float(np.mean(sure)) if sure else float("nan"),
        "fnr_mean": float(np.mean(fnr)) if fnr else float("nan"),
        "roc_points": None,
    }
    if rankings is not None:
        fpr, tpr = roc_curve_from_rankings(rankings, truth, p)
        out["roc_points"] = np.column_stack([fpr, tpr])
    return out
