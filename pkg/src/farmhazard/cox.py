"""Cox partial likelihood: loss, score, Hessian and theory diagnostics.

The loss is the negative log partial likelihood divided by ``n`` with the
Breslow treatment of tied failure times. Every evaluation is a single pass
over the samples sorted by time, so a loss/gradient costs ``O(n d)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .data import FailureIndex

HESSIAN_CAP = 2000


class CoxError(ValueError):
    """Numerical failure while evaluating the partial likelihood."""


class SingularBlockError(CoxError):
    pass


@dataclass(frozen=True)
class CoxDerivatives:
    loss: float
    gradient: np.ndarray
    hessian: Optional[np.ndarray] = None


class SortedDesign:
    """A design matrix permuted into failure-index order.

    Holds the transposed, C-contiguous copy used by the compiled kernels.
    """

    def __init__(self, design, index: FailureIndex):
        design = np.asarray(design, dtype=float)
        if design.ndim == 1:
            design = design.reshape(-1, 1)
        if design.shape[0] != index.n:
            raise CoxError(f"design has {design.shape[0]} rows but index covers {index.n} samples")
        self.index = index
        self.n, self.d = design.shape
        self.ws = np.ascontiguousarray(design[index.order])
        self.wt = np.ascontiguousarray(self.ws.T)
        self.delta = np.ascontiguousarray(index.delta_sorted, dtype=np.int64)
        self.dstart = np.ascontiguousarray(index.dstart)

    def eta(self, theta) -> np.ndarray:
        eta = self.ws @ np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(eta)):
            bad = int(self.index.order[np.flatnonzero(~np.isfinite(eta))[0]])
            raise CoxError(f"non-finite linear predictor for sample {bad}")
        return eta

    def loss_eta(self, eta) -> float:
        return _kernels.neg_loglik(eta, self.delta, self.dstart) / self.n

    def loss(self, theta) -> float:
        return self.loss_eta(self.eta(theta))

    def derivatives_eta(self, eta):
        """Loss, gradient in eta (scaled by 1/n), ``ea`` and Hessian diagonal."""
        nll, ea, hdiag = _kernels.risk_sweep(eta, self.delta, self.dstart)
        g_eta = (ea - self.delta) / self.n
        return nll / self.n, g_eta, ea, hdiag / self.n

    def hess_times(self, eta, ea, v) -> np.ndarray:
        v = np.ascontiguousarray(v, dtype=float)
        return _kernels.hess_times(eta, self.dstart, ea, v) / self.n

    def derivatives(self, theta, want_hessian=True, hessian_cap=HESSIAN_CAP) -> CoxDerivatives:
        eta = self.eta(theta)
        loss, g_eta, ea, _ = self.derivatives_eta(eta)
        grad = self.wt @ g_eta
        hess = None
        if want_hessian:
            if self.d > hessian_cap:
                raise CoxError(f"refusing to form a {self.d}x{self.d} Hessian (cap {hessian_cap})")
            hw = self.hess_times(eta, ea, self.ws)
            hess = self.wt @ hw
            hess = (hess + hess.T) / 2
        return CoxDerivatives(loss, grad, hess)


def partial_loglik_loss(design, theta, index: FailureIndex) -> float:
    """Negative log partial likelihood divided by ``n``."""
    return SortedDesign(design, index).loss(theta)


def cox_derivatives(design, theta, index: FailureIndex, want_hessian: bool = True,
                    hessian_cap: int = HESSIAN_CAP) -> CoxDerivatives:
    return SortedDesign(design, index).derivatives(theta, want_hessian, hessian_cap)


def score_at_truth(design_hat, x, beta_star, index: FailureIndex) -> float:
    """Sup-norm of the score of ``design_hat`` with risk weights from ``x @ beta_star``.

    This is the noise level that governs the admissible penalty range for
    sign recovery: covariates come from the (estimated) augmented design
    while the risk-set weights use the true linear predictor.
    """
    design_hat = np.asarray(design_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if design_hat.shape[0] != x.shape[0]:
        raise CoxError("augmented design and raw design are not row-aligned")
    sd = SortedDesign(design_hat, index)
    eta = (x @ np.asarray(beta_star, dtype=float))[index.order]
    _, g_eta, _, _ = sd.derivatives_eta(eta)
    return float(np.max(np.abs(sd.wt @ g_eta))) if sd.d else 0.0


def irrepresentable_stat(design, theta_star, support, index: FailureIndex,
                         rcond_min: float = 1e-12) -> float:
    """Max absolute row sum of ``H[S^c, S] H[S, S]^{-1}`` at ``theta_star``."""
    support = np.asarray(sorted(set(int(j) for j in support)), dtype=int)
    d = np.asarray(design).shape[1]
    if support.size == 0:
        raise CoxError("support must be nonempty")
    comp = np.setdiff1d(np.arange(d), support)
    if comp.size == 0:
        return 0.0
    sd = SortedDesign(design, index)
    eta = sd.eta(theta_star)
    _, _, ea, _ = sd.derivatives_eta(eta)
    hs = sd.hess_times(eta, ea, sd.ws[:, support])
    h_ss = sd.wt[support] @ hs
    h_cs = sd.wt[comp] @ hs
    h_ss = (h_ss + h_ss.T) / 2
    cond = np.linalg.cond(h_ss)
    if not np.isfinite(cond) or 1.0 / cond < rcond_min:
        raise SingularBlockError(
            f"H[S,S] is numerically singular (condition number {cond:.3g}); "
            "add a small ridge to the support block before computing the statistic"
        )
    m = np.linalg.solve(h_ss, h_cs.T).T
    return float(np.max(np.abs(m).sum(axis=1)))
