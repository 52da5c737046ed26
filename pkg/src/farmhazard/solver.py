"""Weighted elastic-net penalized Cox regression and the five fitting procedures.

The objective is

    loss(theta) + lam * sum_j w_j * (alpha * |theta_j| + (1 - alpha) * theta_j**2 / 2)

where ``w_j = 0`` marks an unpenalized coordinate. Each outer iteration
expands the loss to second order at the current point (exact Hessian for
``d <= HESSIAN_CAP``, its diagonal otherwise), minimizes the penalized
quadratic by cyclic coordinate descent and backtracks on the true
objective, so the objective never increases.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from . import _kernels
from .cox import HESSIAN_CAP, SortedDesign
from .data import FailureIndex, SurvivalDataset, dataset_index
from .factors import FactorDecomposition, decompose, estimate_num_factors_act

log = logging.getLogger(__name__)

SCAD_A = 3.7
ENET_ALPHA = 0.9
METHODS = ("lasso", "elastic_net", "scad", "farmhazard_l", "farmhazard_s")
METHOD_ALIASES = {"enet": "elastic_net", "farmhazard-l": "farmhazard_l", "farmhazard-s": "farmhazard_s"}


class SolverError(RuntimeError):
    pass


class DivergenceError(SolverError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class PenaltySpec:
    lam: float
    alpha: float = 1.0
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).copy()
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("penalty weights must be finite and nonnegative")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def resolve(self, d: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(d)
        if self.weights.shape != (d,):
            raise ValueError(f"weights have shape {self.weights.shape}, expected ({d},)")
        return np.asarray(self.weights)

    def value(self, theta) -> float:
        w = self.resolve(len(theta))
        return float(self.lam * np.sum(w * (self.alpha * np.abs(theta) + (1 - self.alpha) * theta**2 / 2)))


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    penalty: PenaltySpec
    objective: float
    kkt_max_violation: float
    n_iterations: int
    converged: bool
    objective_trace: tuple = field(default_factory=tuple)
    kkt_tol: float = 0.0


def kkt_violation(grad, theta, lam, alpha, w) -> float:
    """Largest violation of the stationarity conditions of the penalized problem."""
    grad = np.asarray(grad)
    theta = np.asarray(theta)
    pen = (w > 0) & (lam > 0)
    viol = np.abs(grad).astype(float)
    nz = pen & (theta != 0)
    viol[nz] = np.abs(grad[nz] + lam * w[nz] * (alpha * np.sign(theta[nz]) + (1 - alpha) * theta[nz]))
    z = pen & (theta == 0)
    viol[z] = np.maximum(np.abs(grad[z]) - lam * alpha * w[z], 0.0)
    return float(viol.max()) if viol.size else 0.0


def kkt_tolerance(sd: SortedDesign) -> float:
    tol = getattr(sd, "_kkt_tol", None)
    if tol is None:
        _, g_eta, _, _ = sd.derivatives_eta(np.zeros(sd.n))
        g0 = np.abs(sd.wt @ g_eta).max() if sd.d else 0.0
        tol = 1e-6 * max(1.0, float(g0))
        sd._kkt_tol = tol
    return tol


def _solve(sd: SortedDesign, lam, alpha, w, theta, *, fixed_zero=None, max_outer=100,
           max_sweeps=10_000, hessian="auto", tol=None):
    """Proximal Newton iterations; returns ``(theta, objective, kkt, iters, converged, trace)``."""
    d, n = sd.d, sd.n
    tol = kkt_tolerance(sd) if tol is None else tol
    l1 = lam * alpha * w
    l2 = lam * (1 - alpha) * w
    if fixed_zero is not None:
        l1 = np.where(fixed_zero, np.inf, l1)
        l2 = np.where(fixed_zero, 0.0, l2)
    exact = d <= HESSIAN_CAP if hessian == "auto" else hessian == "exact"

    def pen(th):
        return float(np.sum(lam * w * (alpha * np.abs(th) + (1 - alpha) * th * th / 2))) if lam > 0 else 0.0

    theta = np.array(theta, dtype=float)
    if fixed_zero is not None:
        theta[fixed_zero] = 0.0
    eta = sd.eta(theta)
    trace = []
    increases = 0
    converged = False
    kkt = np.inf
    it = 0
    smooth_step = False
    polish = 0
    for it in range(1, max_outer + 1):
        loss, g_eta, ea, hdiag = sd.derivatives_eta(eta)
        obj = loss + pen(theta)
        if trace and obj > trace[-1] + 1e-10 * max(1.0, abs(trace[-1])):
            increases += 1
            if increases >= 3:
                raise DivergenceError("objective increased across three outer iterations", list(trace))
        trace.append(obj)
        grad = sd.wt @ g_eta
        if fixed_zero is not None:
            free = ~fixed_zero
            kkt = kkt_violation(grad[free], theta[free], lam, alpha, w[free])
        else:
            kkt = kkt_violation(grad, theta, lam, alpha, w)
        if kkt < tol:
            converged = True
            # Newton steps on a smooth working set are cheap and converge quadratically
            if not smooth_step or kkt < 1e-3 * tol or polish >= 2:
                break
            polish += 1
        # working set: current support, free coordinates and KKT violators
        ws = (theta != 0) | (l1 < np.abs(grad))
        if fixed_zero is not None:
            ws &= ~fixed_zero
        ws_idx = np.flatnonzero(ws)
        wt_ws = sd.wt[ws_idx]
        if exact:
            hwt = np.ascontiguousarray(sd.hess_times(eta, ea, np.ascontiguousarray(wt_ws.T)).T)
        else:
            hwt = wt_ws * hdiag
        sub = theta[ws_idx].copy()
        smooth_step = exact and not np.any(l1[ws_idx]) and ws_idx.size <= HESSIAN_CAP
        if smooth_step:
            # smooth model on the working set: take the Newton step directly
            a = wt_ws @ hwt.T
            a = (a + a.T) / 2 + np.diag(l2[ws_idx])
            rhs = -(grad[ws_idx] + l2[ws_idx] * sub)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", linalg.LinAlgWarning)
                    sub = sub + linalg.solve(a, rhs, assume_a="pos")
            except (linalg.LinAlgError, ValueError):
                sub = sub + linalg.lstsq(a, rhs)[0]
        else:
            curv = np.einsum("ij,ij->i", wt_ws, hwt)
            u = np.zeros(n)
            inner_tol = max(min(1e-3, 0.05 * kkt), 1e-3 * tol)
            _kernels.cd_quadratic(wt_ws, hwt, grad[ws_idx], curv, sub, l1[ws_idx], l2[ws_idx], u,
                                  inner_tol, max_sweeps)
        new = theta.copy()
        new[ws_idx] = sub
        step = new - theta
        if not np.any(step):
            break
        dstep = sd.ws @ step
        decrement = float(grad @ step) + pen(new) - pen(theta)
        t = 1.0
        while True:
            cand = theta + t * step if t < 1.0 else new
            eta_c = eta + t * dstep
            obj_c = sd.loss_eta(eta_c) + pen(cand)
            if obj_c <= obj + 1e-4 * t * min(decrement, 0.0):
                break
            t *= 0.5
            if t < 1e-12:
                cand, eta_c = None, None
                break
        if cand is None:
            log.debug("line search stalled at kkt=%.3g", kkt)
            break
        theta, eta = cand, eta_c
        if t * np.max(np.abs(step)) < 1e-13 * (1.0 + np.max(np.abs(theta))):
            break
    return theta, trace[-1], kkt, it, converged, tuple(trace)


def _as_sorted(design, index) -> SortedDesign:
    if isinstance(design, SortedDesign):
        return design
    return SortedDesign(design, index)


def fit_weighted_enet_cox(design, index: Optional[FailureIndex], penalty: PenaltySpec,
                          init=None, *, max_outer: int = 100, hessian: str = "auto") -> FitResult:
    """Minimize the weighted elastic-net penalized Cox loss.

    ``design`` may be an ``n x d`` array (with ``index``) or a prepared
    :class:`SortedDesign`.
    """
    sd = _as_sorted(design, index)
    w = penalty.resolve(sd.d)
    if init is not None:
        theta0 = np.asarray(init, dtype=float)
    elif penalty.lam > 0 and np.any(w == 0):
        # the null-model solution; exact for every lambda >= lambda_max
        theta0 = unpenalized_fit(sd, w)
    else:
        theta0 = np.zeros(sd.d)
    theta, obj, kkt, iters, conv, trace = _solve(
        sd, penalty.lam, penalty.alpha, w, theta0, max_outer=max_outer, hessian=hessian
    )
    return FitResult(theta, penalty, obj, kkt, iters, conv, trace, kkt_tolerance(sd))


def unpenalized_fit(sd: SortedDesign, w) -> np.ndarray:
    """Fit only the zero-weight coordinates, holding penalized ones at zero."""
    free = w == 0
    if not free.any():
        return np.zeros(sd.d)
    theta, *_ = _solve(sd, 0.0, 1.0, w, np.zeros(sd.d), fixed_zero=~free)
    return theta


def lambda_max(sd: SortedDesign, alpha: float, w) -> float:
    pen = w > 0
    if not pen.any():
        return 0.0
    theta_u = unpenalized_fit(sd, w)
    _, g_eta, _, _ = sd.derivatives_eta(sd.eta(theta_u))
    grad = sd.wt[pen] @ g_eta
    return float(np.max(np.abs(grad) / (alpha * w[pen])))


def scad_weight(beta_abs, lam: float, a: float = SCAD_A):
    """Derivative of the SCAD penalty at ``beta_abs``."""
    if lam <= 0 or a <= 2:
        raise ValueError("scad_weight needs lam > 0 and a > 2")
    b = np.abs(np.asarray(beta_abs, dtype=float))
    out = lam * np.where(b <= lam, 1.0, np.maximum(a * lam - b, 0.0) / ((a - 1) * lam))
    return float(out) if out.ndim == 0 else out


WeightSpec = Union[None, np.ndarray, Callable[[float], np.ndarray]]


def _weights_at(weights: WeightSpec, lam: float, d: int) -> np.ndarray:
    if weights is None:
        return np.ones(d)
    if callable(weights):
        return np.asarray(weights(lam), dtype=float)
    return np.asarray(weights, dtype=float)


def saturated_loglik(index: FailureIndex) -> float:
    """Log partial likelihood of the saturated model under the Breslow convention."""
    d = index.dstart[index.dstart > 0]
    return float(-np.sum(d * np.log(d)))


@dataclass
class PathResult:
    lambdas: np.ndarray
    thetas: np.ndarray
    converged: np.ndarray
    kkt: np.ndarray

    def __len__(self):
        return len(self.lambdas)


def fit_path(sd: SortedDesign, lambdas: Sequence[float], alpha: float = 1.0, weights: WeightSpec = None,
             init=None, dev_ratio_stop: Optional[float] = 0.999,
             stop: Optional[Callable[[int, np.ndarray], bool]] = None) -> PathResult:
    """Warm-started fits along a decreasing grid.

    The path stops early once the fraction of null deviance explained exceeds
    ``dev_ratio_stop`` or once ``stop(i, theta)`` returns true after the
    ``i``-th fit; the returned arrays then cover only the fitted prefix.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    theta = np.zeros(sd.d) if init is None else np.asarray(init, dtype=float).copy()
    thetas, conv, kkts = [], [], []
    ll_null = ll_sat = None
    if dev_ratio_stop is not None:
        w0 = _weights_at(weights, lambdas[0] if len(lambdas) else 0.0, sd.d)
        ll_null = -sd.n * sd.loss(unpenalized_fit(sd, w0))
        ll_sat = saturated_loglik(sd.index)
    for lam in lambdas:
        w = _weights_at(weights, lam, sd.d)
        theta, _, kkt, _, ok, _ = _solve(sd, lam, alpha, w, theta)
        thetas.append(theta.copy())
        conv.append(ok)
        kkts.append(kkt)
        if dev_ratio_stop is not None and ll_sat - ll_null > 0:
            ratio = 1 - (ll_sat - (-sd.n * sd.loss(theta))) / (ll_sat - ll_null)
            if ratio > dev_ratio_stop:
                break
        if stop is not None and stop(len(thetas) - 1, theta):
            break
    k = len(thetas)
    return PathResult(lambdas[:k], np.array(thetas).reshape(k, sd.d), np.array(conv), np.array(kkts))


@dataclass
class ProcedureFit:
    """Result of one of the five procedures; ``beta`` are the original-coordinate coefficients."""

    method: str
    beta: np.ndarray
    fit: FitResult
    lam: float
    k: int = 0
    decomposition: Optional[FactorDecomposition] = None
    initializer: Optional[np.ndarray] = None
    cv: Optional[object] = None

    @property
    def gamma(self) -> np.ndarray:
        return self.fit.theta_hat[len(self.beta):]

    def risk_scores(self, x_new) -> np.ndarray:
        """Linear predictor for new covariate rows."""
        x_new = np.asarray(x_new, dtype=float)
        if self.decomposition is None:
            return x_new @ self.beta
        f, u = self.decomposition.transform(x_new)
        return u @ self.beta + f @ self.gamma


def normalize_method(method: str) -> str:
    m = METHOD_ALIASES.get(method, method)
    if m not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return m


def procedure_design(method: str, x, k: Optional[int] = None):
    """Design matrix and penalty weights for a procedure (before LLA reweighting)."""
    method = normalize_method(method)
    x = np.asarray(x, dtype=float)
    p = x.shape[1]
    if method.startswith("farmhazard"):
        if k is None:
            k = estimate_num_factors_act(x)
        dec = decompose(x, k)
        w = np.concatenate([np.ones(p), np.zeros(dec.k)])
        return dec.augmented(), w, dec
    return x, np.ones(p), None


def lla_weights(initializer, base_w, a: float = SCAD_A) -> Callable[[float], np.ndarray]:
    """Per-lambda relative weights ``p'_lam(|b_j|) / lam`` for one LLA step."""
    b = np.abs(np.concatenate([np.asarray(initializer, dtype=float),
                               np.zeros(len(base_w) - len(initializer))]))
    pen = base_w > 0

    def weights(lam: float) -> np.ndarray:
        if lam <= 0 or not np.isfinite(lam):
            return base_w.copy()
        out = np.zeros_like(base_w)
        out[pen] = scad_weight(b[pen], lam, a) / lam
        return out

    return weights


def fit_procedure(method: str, dataset: SurvivalDataset, k: Optional[int] = None, lam: Optional[float] = None,
                  *, initializer: Optional[np.ndarray] = None, init_lam: Optional[float] = None,
                  cv_folds: int = 10, seed: int = 0, grid: Optional[np.ndarray] = None,
                  criterion: str = "sparse", rule: str = "1se") -> ProcedureFit:
    """Fit one of ``lasso``, ``elastic_net``, ``scad``, ``farmhazard_l``, ``farmhazard_s``.

    When ``lam`` is omitted it is chosen by cross-validation. ``scad`` and
    ``farmhazard_s`` take their LLA initializer from ``initializer`` or, if
    absent, from a LASSO resp. FarmHazard-L fit (tuned at ``init_lam`` or by
    the same criterion). ``criterion`` names the cross-validation score
    (``"sparse"`` or ``"deviance"``) and ``rule`` the selection rule
    (``"max"`` or ``"1se"``), see :mod:`farmhazard.tuning`.
    """
    from .tuning import cv_select_lambda

    method = normalize_method(method)
    dataset.require_events()
    if np.any(dataset.z == 0):
        raise ValueError("zero follow-up times present; remove those rows before fitting")
    index = dataset_index(dataset)
    design, base_w, dec = procedure_design(method, dataset.x, k)
    sd = SortedDesign(design, index)
    alpha = ENET_ALPHA if method == "elastic_net" else 1.0
    weights: WeightSpec = base_w
    if method in ("scad", "farmhazard_s"):
        if initializer is None:
            base = "lasso" if method == "scad" else "farmhazard_l"
            first = fit_procedure(base, dataset, k=dec.k if dec is not None else None, lam=init_lam,
                                  cv_folds=cv_folds, seed=seed, criterion=criterion, rule=rule)
            initializer = first.beta
        weights = lla_weights(initializer, base_w)
    cv = None
    if lam is None:
        cv = cv_select_lambda(dataset, design=design, weights=weights, alpha=alpha, k_folds=cv_folds,
                              grid=grid, seed=seed, sorted_design=sd, criterion=criterion,
                              rule=rule)
        lam = cv.lambda_star
        init = cv.full_path_theta
    else:
        init = None
    w = _weights_at(weights, lam, sd.d)
    fit = fit_weighted_enet_cox(sd, None, PenaltySpec(lam, alpha, w), init=init)
    p = dataset.p
    return ProcedureFit(method, fit.theta_hat[:p].copy(), fit, float(lam), dec.k if dec is not None else 0,
                        dec, None if initializer is None else np.asarray(initializer), cv)
