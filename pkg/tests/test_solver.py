import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from farmhazard.cox import SortedDesign, cox_derivatives
from farmhazard.data import SurvivalDataset, build_failure_index
from farmhazard.factors import decompose
from farmhazard.solver import (PenaltySpec, fit_path, fit_procedure, fit_weighted_enet_cox, kkt_tolerance,
                               kkt_violation, lambda_max, scad_weight)
from oracles import lasso_lbfgs, naive_loss, newton_mle, random_survival


def sd_of(x, z, d):
    return SortedDesign(x, build_failure_index(z, d))


def test_scad_weight_examples():
    assert scad_weight(0.0, 1.5) == 1.5
    assert scad_weight(3.7 * 2, 2.0) == 0.0
    assert scad_weight(10.0, 2.0) == 0.0
    assert scad_weight(2.0, 1.0) == pytest.approx(1.7 / 2.7, abs=1e-15)
    with pytest.raises(ValueError):
        scad_weight(1.0, 0.0)


def test_penalty_spec_validation():
    with pytest.raises(ValueError):
        PenaltySpec(-1.0)
    with pytest.raises(ValueError):
        PenaltySpec(1.0, alpha=0.0)
    with pytest.raises(ValueError):
        PenaltySpec(1.0, weights=[1.0, -1.0])


def test_lambda_zero_matches_newton(rng):
    x, z, d = random_survival(rng, 20, 3)
    fit = fit_weighted_enet_cox(x, build_failure_index(z, d), PenaltySpec(0.0))
    assert fit.converged
    np.testing.assert_allclose(fit.theta_hat, newton_mle(x, z, d), atol=1e-6)


def test_lambda_max_gives_empty_support(rng):
    x, z, d = random_survival(rng, 40, 6)
    w = np.array([1, 1, 0, 1, 2, 1.0])
    sd = sd_of(x, z, d)
    lmax = lambda_max(sd, 1.0, w)
    for lam in (lmax, 1.5 * lmax):
        fit = fit_weighted_enet_cox(sd, None, PenaltySpec(lam, 1.0, w))
        assert np.all(fit.theta_hat[w > 0] == 0)
    fit = fit_weighted_enet_cox(sd, None, PenaltySpec(0.9 * lmax, 1.0, w))
    assert np.any(fit.theta_hat[w > 0] != 0)


def test_two_sample_grid_search(two_sample):
    x, z, d = two_sample
    lam = 0.1
    fit = fit_weighted_enet_cox(x, build_failure_index(z, d), PenaltySpec(lam))
    grid = np.linspace(-3, 3, 600_001)
    obj = [naive_loss(x, [t], z, d) + lam * abs(t) for t in grid[::1000]]
    coarse = grid[::1000][int(np.argmin(obj))]
    fine = np.linspace(coarse - 0.01, coarse + 0.01, 20_001)
    obj = [naive_loss(x, [t], z, d) + lam * abs(t) for t in fine]
    assert fit.theta_hat[0] == pytest.approx(fine[int(np.argmin(obj))], abs=1e-6)


def test_lasso_matches_lbfgs_oracle(rng):
    for _ in range(5):
        x, z, d = random_survival(rng, 30, 4)
        sd = sd_of(x, z, d)
        lam = 0.3 * lambda_max(sd, 1.0, np.ones(4))
        fit = fit_weighted_enet_cox(sd, None, PenaltySpec(lam))
        oracle = lasso_lbfgs(x, z, d, lam)
        np.testing.assert_allclose(fit.theta_hat, oracle, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.2), st.sampled_from([1.0, 0.5, 0.9]))
def test_kkt_certificate(seed, frac, alpha):
    rng = np.random.default_rng(seed)
    n, dd = int(rng.integers(10, 60)), int(rng.integers(1, 12))
    x, z, d = random_survival(rng, n, dd, ties=bool(seed % 3 == 0))
    sd = sd_of(x, z, d)
    w = rng.choice([0.0, 0.5, 1.0, 2.0], size=dd)
    lmax = lambda_max(sd, alpha, w)
    lam = frac * lmax if lmax > 0 else 0.1
    fit = fit_weighted_enet_cox(sd, None, PenaltySpec(lam, alpha, w))
    if fit.converged:
        grad = cox_derivatives(x, fit.theta_hat, build_failure_index(z, d), False).gradient
        assert kkt_violation(grad, fit.theta_hat, lam, alpha, w) < kkt_tolerance(sd)
    trace = np.array(fit.objective_trace)
    assert np.all(np.diff(trace) <= 1e-10 * np.maximum(1, np.abs(trace[:-1])))


def test_warm_start_path_not_worse(rng):
    x, z, d = random_survival(rng, 40, 8)
    sd = sd_of(x, z, d)
    lmax = lambda_max(sd, 1.0, np.ones(8))
    lams = lmax * np.logspace(0, -1.5, 12)
    path = fit_path(sd, lams, dev_ratio_stop=None)
    for lam, th in zip(lams, path.thetas):
        cold = fit_weighted_enet_cox(sd, None, PenaltySpec(lam))
        warm_obj = sd.loss(th) + lam * np.abs(th).sum()
        assert warm_obj <= cold.objective + 1e-8


def test_augmented_design_same_unpenalized_loss(rng):
    x, z, d = random_survival(rng, 60, 6)
    x = x + rng.standard_normal((60, 1)) @ rng.standard_normal((1, 6))
    dec = decompose(x, 2)
    idx = build_failure_index(z, d)
    a = fit_weighted_enet_cox(np.hstack([x, dec.f_hat]), idx, PenaltySpec(0.0))
    b = fit_weighted_enet_cox(dec.augmented(), idx, PenaltySpec(0.0))
    # (x, f) and (u, f) span the same column space up to the intercept
    assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_farmhazard_noiseless_is_pcr(rng):
    n, p = 80, 10
    f = rng.standard_normal((n, 2))
    x = f @ rng.standard_normal((2, p))
    z = rng.exponential(np.exp(-f[:, 0]))
    d = (rng.random(n) < 0.8).astype(int)
    ds = SurvivalDataset(z, d, x)
    fit = fit_procedure("farmhazard_l", ds, k=2, lam=0.05)
    assert np.all(fit.beta == 0)
    # gamma is the factors-only Cox MLE
    dec = decompose(x, 2)
    np.testing.assert_allclose(fit.gamma, newton_mle(dec.f_hat, z, d), atol=1e-6)


def test_scad_with_zero_initializer_is_lasso(rng):
    x, z, d = random_survival(rng, 50, 5)
    ds = SurvivalDataset(z, d, x)
    lam = 0.05
    scad = fit_procedure("scad", ds, lam=lam, initializer=np.zeros(5))
    lasso = fit_procedure("lasso", ds, lam=lam)
    np.testing.assert_allclose(scad.beta, lasso.beta, atol=1e-10)


def test_fit_procedure_rejects_zero_time(rng):
    x, z, d = random_survival(rng, 10, 2)
    z[0] = 0.0
    with pytest.raises(ValueError, match="zero follow-up"):
        fit_procedure("lasso", SurvivalDataset(z, d, x), lam=0.1)


def test_unknown_method(rng):
    x, z, d = random_survival(rng, 10, 2)
    with pytest.raises(ValueError, match="unknown method"):
        fit_procedure("ridge", SurvivalDataset(z, d, x), lam=0.1)


def test_risk_scores_match_training_design(rng):
    x, z, d = random_survival(rng, 60, 8)
    x = x + rng.standard_normal((60, 1)) @ rng.standard_normal((1, 8))
    fit = fit_procedure("farmhazard_l", SurvivalDataset(z, d, x), k=1, lam=0.02)
    np.testing.assert_allclose(fit.risk_scores(x), fit.decomposition.augmented() @ fit.fit.theta_hat, atol=1e-10)
