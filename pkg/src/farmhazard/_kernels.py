"""Compiled risk-set sweeps and the coordinate-descent inner loop.

All kernels work on samples already sorted by :class:`FailureIndex.order`.
``dstart[i]`` is the number of events whose risk set is the suffix starting
at sorted position ``i``. Suffix sums are rescaled by the running maximum of
the linear predictor so ``exp`` never overflows, and the forward prefix sums
over ``1/S0`` are rescaled the same way.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def log_suffix_sums(eta):
    n = eta.shape[0]
    out = np.empty(n)
    mx = -np.inf
    s = 0.0
    for i in range(n - 1, -1, -1):
        e = eta[i]
        if e > mx:
            s = s * math.exp(mx - e) + 1.0
            mx = e
        else:
            s += math.exp(e - mx)
        out[i] = mx + math.log(s)
    return out


@njit(cache=True)
def neg_loglik(eta, delta, dstart):
    """Return ``-Q`` (the unnormalized negative log partial likelihood)."""
    logs0 = log_suffix_sums(eta)
    total = 0.0
    for i in range(eta.shape[0]):
        if delta[i]:
            total -= eta[i]
        if dstart[i] > 0:
            total += dstart[i] * logs0[i]
    return total


@njit(cache=True)
def risk_sweep(eta, delta, dstart):
    """Negative log partial likelihood and per-sample derivative pieces.

    Returns ``(nll, ea, hdiag)`` where ``ea[i] = exp(eta_i) * sum_j 1/S0_j``
    over failures whose risk set contains ``i`` (so the gradient in ``eta``
    is ``ea - delta``) and ``hdiag`` is the diagonal of the Hessian in
    ``eta``. Nothing is divided by ``n``.
    """
    n = eta.shape[0]
    logs0 = log_suffix_sums(eta)
    nll = 0.0
    ea = np.zeros(n)
    hdiag = np.zeros(n)
    mlog = -np.inf
    den = 0.0
    den2 = 0.0
    for i in range(n):
        if delta[i]:
            nll -= eta[i]
        d = dstart[i]
        if d > 0:
            nll += d * logs0[i]
            lw = -logs0[i]
            if lw > mlog:
                fac = math.exp(mlog - lw)
                den *= fac
                den2 *= fac * fac
                mlog = lw
            c = math.exp(lw - mlog)
            den += d * c
            den2 += d * c * c
        if den > 0.0:
            a = math.exp(eta[i] + mlog + math.log(den))
            ea[i] = a
            hdiag[i] = a - a * a * den2 / (den * den)
    return nll, ea, hdiag


@njit(cache=True)
def hess_times(eta, dstart, ea, v):
    """Exact Hessian (in ``eta``) applied to each column of ``v``.

    Uses ``(H v)_i = ea_i * (v_i - avg_i)`` where ``avg_i`` is the
    ``1/S0``-weighted average, over failures whose risk set holds ``i``, of
    the risk-set means of ``v``.
    """
    n, m = v.shape
    r = np.zeros((n, m))
    t = np.zeros(m)
    mx = -np.inf
    s = 0.0
    logs0 = np.empty(n)
    for i in range(n - 1, -1, -1):
        e = eta[i]
        if e > mx:
            fac = math.exp(mx - e)
            s *= fac
            for k in range(m):
                t[k] *= fac
            mx = e
        c = math.exp(e - mx)
        s += c
        for k in range(m):
            t[k] += c * v[i, k]
        logs0[i] = mx + math.log(s)
        if dstart[i] > 0:
            for k in range(m):
                r[i, k] = t[k] / s
    out = np.zeros((n, m))
    num = np.zeros(m)
    mlog = -np.inf
    den = 0.0
    for i in range(n):
        d = dstart[i]
        if d > 0:
            lw = -logs0[i]
            if lw > mlog:
                fac = math.exp(mlog - lw)
                den *= fac
                for k in range(m):
                    num[k] *= fac
                mlog = lw
            c = d * math.exp(lw - mlog)
            den += c
            for k in range(m):
                num[k] += c * r[i, k]
        if den > 0.0:
            a = ea[i]
            for k in range(m):
                out[i, k] = a * (v[i, k] - num[k] / den)
    return out


@njit(cache=True)
def _soft(z, g):
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


@njit(cache=True)
def cd_quadratic(wt, hwt, grad, curv, theta, l1, l2, u, tol, max_sweeps):
    """Coordinate descent on a penalized quadratic model.

    Minimizes ``grad^T s + s^T A s / 2 +
    sum_k l1_k |b_k| + l2_k b_k^2 / 2`` over ``b``, with ``s`` the step from
    the expansion point and ``A = W^T H W`` accessed
    through ``wt`` (rows of ``W'``) and ``hwt`` (rows of ``(H W)'``).
    ``u`` holds ``H W s`` and is updated in place along with
    ``theta``. Returns the number of sweeps used.
    """
    d, n = wt.shape
    active = np.zeros(d, dtype=np.bool_)
    sweeps = 0
    full = True
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        for k in range(d):
            if not full and not active[k]:
                continue
            denom = curv[k] + l2[k]
            if denom <= 0.0:
                continue
            g = grad[k]
            for i in range(n):
                g += wt[k, i] * u[i]
            old = theta[k]
            new = _soft(curv[k] * old - g, l1[k]) / denom
            if new != old:
                step = new - old
                theta[k] = new
                for i in range(n):
                    u[i] += step * hwt[k, i]
                ch = abs(step) * math.sqrt(denom)
                if ch > max_change:
                    max_change = ch
            if new != 0.0:
                active[k] = True
        if max_change < tol:
            if full:
                break
            full = True
        else:
            full = False
    return sweeps
