"""Approximate factor model: PCA estimates of loadings, factors and idiosyncratic parts.

``decompose`` centers the covariates, takes the top ``k`` eigenpairs of a
pilot covariance and returns ``B = Gamma Lambda^{1/2}``,
``F = X B Lambda^{-1}`` and ``U = X - F B'``. With the sample covariance as
pilot this coincides with the usual PCA solution (``F / sqrt(n)`` are
eigenvectors of ``X X'`` up to the ``n`` vs ``n - 1`` scaling).

``estimate_num_factors_act`` implements adjusted eigenvalue thresholding on
the sample correlation matrix.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg


class FactorError(ValueError):
    pass


@dataclass(frozen=True)
class PilotEigen:
    """Leading eigenpairs of the pilot covariance.

    ``sigma_hat`` is ``None`` when the eigenpairs came from the ``n x n``
    Gram matrix (sample covariance with ``p > n``).
    """

    sigma_hat: Optional[np.ndarray]
    lambda_hat: np.ndarray
    gamma_hat: np.ndarray


@dataclass(frozen=True)
class FactorDecomposition:
    k: int
    b_hat: np.ndarray
    f_hat: np.ndarray
    u_hat: np.ndarray
    means: np.ndarray
    pilot: Optional[PilotEigen] = None

    def augmented(self) -> np.ndarray:
        """The design ``(U, F)`` used by the factor-augmented fits."""
        return np.hstack([self.u_hat, self.f_hat])

    def transform(self, x_new) -> tuple:
        """Factors and idiosyncratic parts of new rows with the fitted loadings.

        Uses the training means and the least-squares factor projection
        ``f = (B'B)^{-1} B' x``, which for PCA loadings equals
        ``Lambda^{-1} B' x``.
        """
        xc = np.asarray(x_new, dtype=float) - self.means
        if self.k == 0:
            return np.zeros((xc.shape[0], 0)), xc
        f = np.linalg.lstsq(self.b_hat, xc.T, rcond=None)[0].T
        return f, xc - f @ self.b_hat.T


def pilot_covariance(x2) -> np.ndarray:
    x2 = np.asarray(x2, dtype=float)
    if x2.shape[0] < 2:
        raise FactorError("need at least two rows for a covariance estimate")
    xc = x2 - x2.mean(axis=0)
    s = xc.T @ xc / (x2.shape[0] - 1)
    return (s + s.T) / 2


def top_k_eigen(sigma_hat, k: int):
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    p = sigma_hat.shape[0]
    if not 1 <= k <= p:
        raise FactorError(f"k={k} outside [1, {p}]")
    try:
        vals, vecs = linalg.eigh(sigma_hat, subset_by_index=[p - k, p - 1])
    except linalg.LinAlgError as exc:
        raise FactorError(f"eigendecomposition failed: {exc}") from exc
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def _top_k_eigen_gram(xc, k: int):
    # eigenpairs of X'X/(n-1) from the smaller XX'
    n = xc.shape[0]
    vals, u = linalg.eigh(xc @ xc.T / (n - 1), subset_by_index=[n - k, n - 1])
    vals = np.clip(vals[::-1], 0.0, None)
    vecs = xc.T @ u[:, ::-1]
    norms = np.linalg.norm(vecs, axis=0)
    norms[norms == 0] = 1.0
    vecs = vecs / norms
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def decompose(x2, k: int, pilot: Optional[Callable] = None) -> FactorDecomposition:
    """Fit the approximate factor model with ``k`` factors.

    ``pilot`` maps centered data to a covariance estimate; the sample
    covariance is used when omitted. ``k = 0`` returns the centered data as
    the idiosyncratic part with an empty factor block.
    """
    x2 = np.asarray(x2, dtype=float)
    n, p2 = x2.shape
    means = x2.mean(axis=0)
    xc = x2 - means
    if k == 0:
        return FactorDecomposition(0, np.zeros((p2, 0)), np.zeros((n, 0)), xc, means)
    if not 1 <= k < min(n, p2):
        raise FactorError(f"k={k} must satisfy 1 <= k < min(n, p2) = {min(n, p2)}")
    if pilot is None and p2 > n:
        sigma = None
        vals, vecs = _top_k_eigen_gram(xc, k)
    else:
        sigma = pilot_covariance(xc) if pilot is None else np.asarray(pilot(xc), dtype=float)
        vals, vecs = top_k_eigen(sigma, k)
    keep = vals > 1e-10 * vals[0]
    if not keep.all():
        k_new = int(np.argmin(keep)) if vals[0] > 0 else 0
        warnings.warn(f"degenerate spectrum: reducing k from {k} to {k_new}", RuntimeWarning)
        if k_new == 0:
            return FactorDecomposition(0, np.zeros((p2, 0)), np.zeros((n, 0)), xc, means)
        vals, vecs, k = vals[:k_new], vecs[:, :k_new], k_new
    b = vecs * np.sqrt(vals)
    f = xc @ b / vals
    u = xc - f @ b.T
    return FactorDecomposition(k, b, f, u, means, PilotEigen(sigma, vals, vecs))


def _correlation_eigenvalues(x2) -> np.ndarray:
    x2 = np.asarray(x2, dtype=float)
    n, p = x2.shape
    xc = x2 - x2.mean(axis=0)
    sd = np.sqrt((xc * xc).sum(axis=0) / (n - 1))
    if np.any(sd <= 1e-12 * max(1.0, float(np.max(np.abs(x2))))):
        bad = np.flatnonzero(sd <= 1e-12 * max(1.0, float(np.max(np.abs(x2)))))
        raise FactorError(
            f"zero-variance columns {bad[:10].tolist()}: standardize or drop them before estimating K"
        )
    xs = xc / (sd * np.sqrt(n - 1))
    # nonzero spectrum of X'X equals that of XX'; use the smaller Gram matrix
    if p <= n:
        vals = linalg.eigvalsh(xs.T @ xs)
    else:
        vals = np.concatenate([linalg.eigvalsh(xs @ xs.T), np.zeros(p - n)])
    return np.sort(np.clip(vals, 0.0, None))[::-1]


def corrected_eigenvalues(eigvals, n: int) -> np.ndarray:
    """Bias-corrected leading eigenvalues of a sample correlation matrix.

    For each ``j`` the Stieltjes transform ``m`` of the spectrum with the
    top ``j`` eigenvalues removed is evaluated at ``lambda_j``, plus one
    guard term at ``(3 lambda_j + lambda_{j+1}) / 4`` that pulls bulk
    eigenvalues (those with a close neighbour) down. With
    ``rho = (p - j) / (n - 1)`` the companion transform is
    ``m_c = -(1 - rho) / lambda_j + rho * m`` and the corrected value is
    ``-1 / m_c``. Entries where the transform is undefined are NaN.
    """
    lam = np.asarray(eigvals, dtype=float)
    p = lam.size
    out = np.full(p, np.nan)
    jmax = min(p - 1, n - 2)
    for j in range(1, jmax + 1):
        lj = lam[j - 1]
        if lj <= 0:
            break
        rest = lam[j:]
        diff = rest - lj
        if np.any(diff == 0):
            continue
        guard = (3.0 * lj + lam[j]) / 4.0 - lj
        m = (np.sum(1.0 / diff) + 1.0 / guard) / (p - j)
        rho = (p - j) / (n - 1)
        mc = -(1.0 - rho) / lj + rho * m
        if mc < 0:
            out[j - 1] = -1.0 / mc
    return out


def estimate_num_factors_act(x2, kmax: Optional[int] = None) -> int:
    """Number of factors by adjusted correlation eigenvalue thresholding.

    Counts corrected eigenvalues above ``1 + sqrt(p2 / n)``. ``kmax`` caps
    the answer when given.
    """
    x2 = np.asarray(x2, dtype=float)
    n, p = x2.shape
    if n < 4 or p < 2:
        raise FactorError("ACT needs n >= 4 and at least two columns")
    lam = _correlation_eigenvalues(x2)
    lc = corrected_eigenvalues(lam, n)
    k = int(np.sum(lc > 1.0 + np.sqrt(p / n)))
    if kmax is not None:
        k = min(k, kmax)
    return k


def _max_abs_offdiag_corr(a, b=None) -> float:
    def scale(m):
        m = m - m.mean(axis=0)
        s = np.linalg.norm(m, axis=0)
        s[s == 0] = np.inf
        return m / s

    if a.shape[1] == 0 or (b is not None and b.shape[1] == 0):
        return 0.0
    if b is None:
        if a.shape[1] < 2:
            return 0.0
        c = scale(a).T @ scale(a)
        np.fill_diagonal(c, 0.0)
    else:
        c = scale(a).T @ scale(b)
    return float(np.max(np.abs(c)))


def decorrelation_report(decomposition: FactorDecomposition) -> dict:
    """Largest absolute sample correlations within U, between U and F, and within X."""
    d = decomposition
    x = d.f_hat @ d.b_hat.T + d.u_hat
    return {
        "max_abs_corr_uu": _max_abs_offdiag_corr(d.u_hat),
        "max_abs_corr_uf": _max_abs_offdiag_corr(d.u_hat, d.f_hat),
        "max_abs_corr_raw": _max_abs_offdiag_corr(x),
    }
