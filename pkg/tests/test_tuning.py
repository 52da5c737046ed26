import numpy as np
import pytest

from farmhazard.cox import SortedDesign
from farmhazard.data import SurvivalDataset, build_failure_index
from farmhazard.solver import fit_procedure
from farmhazard.tuning import (LambdaGrid, TuningError, cv_select_lambda, lambda_grid, stratified_folds,
                               support_refit)
from oracles import lasso_lbfgs, naive_loglik, newton_mle, random_survival


def test_lambda_grid_two_sample(two_sample):
    x, z, d = two_sample
    g = lambda_grid(x, build_failure_index(z, d), n_lambda=5)
    assert g.lambda_max == pytest.approx(0.25, abs=1e-15)
    assert len(g) == 5 and np.all(np.diff(g.values) < 0)


def test_lambda_grid_linear_in_scale(rng):
    x, z, d = random_survival(rng, 30, 4)
    idx = build_failure_index(z, d)
    assert lambda_grid(2 * x, idx).lambda_max == pytest.approx(2 * lambda_grid(x, idx).lambda_max, rel=1e-12)


def test_lambda_grid_degenerate(rng):
    _, z, d = random_survival(rng, 10, 1)
    with pytest.warns(RuntimeWarning):
        g = lambda_grid(np.zeros((10, 2)), build_failure_index(z, d))
    assert g.values.tolist() == [0.0]


def test_grid_must_decrease():
    with pytest.raises(ValueError):
        LambdaGrid(np.array([1.0, 2.0]))


def test_singleton_grid(rng):
    x, z, d = random_survival(rng, 30, 3)
    ds = SurvivalDataset(z, d, x)
    res = cv_select_lambda(ds, "lasso", grid=[0.2])
    assert res.lambda_star == 0.2


def test_stratified_folds_balance(rng):
    delta = np.array([1] * 23 + [0] * 7)
    folds = stratified_folds(delta, 5, rng)
    per = [delta[folds == f].sum() for f in range(5)]
    assert max(per) - min(per) <= 1
    assert np.bincount(folds).max() - np.bincount(folds).min() <= 1


def test_determinism(rng):
    x, z, d = random_survival(rng, 60, 10)
    ds = SurvivalDataset(z, d, x)
    a = cv_select_lambda(ds, "lasso", seed=4)
    b = cv_select_lambda(ds, "lasso", seed=4)
    assert a.lambda_star == b.lambda_star
    np.testing.assert_array_equal(a.folds, b.folds)
    np.testing.assert_array_equal(a.cv_curve, b.cv_curve)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_leave_one_out_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    n = 12
    x, z, d = random_survival(rng, n, 2)
    ds = SurvivalDataset(z, d, x)
    lmax = lambda_grid(x, build_failure_index(z, d)).lambda_max
    grid = lmax * np.array([1.0, 0.8, 0.6, 0.45, 0.35])
    res = cv_select_lambda(ds, "lasso", k_folds=n - 1, grid=grid, seed=seed, criterion="deviance", rule="max",
                           patience=None, dev_ratio_stop=None)
    curve = np.zeros(len(grid))
    for f in range(n - 1):
        tr = res.folds != f
        for i, lam in enumerate(grid):
            th = lasso_lbfgs(x[tr], z[tr], d[tr], lam)
            curve[i] += naive_loglik(x, th, z, d) - naive_loglik(x[tr], th, z[tr], d[tr])
    np.testing.assert_allclose(res.cv_curve, curve, atol=1e-5)
    assert res.index_star == int(np.flatnonzero(curve >= curve.max() - 1e-9)[0])


def test_training_fold_without_events(rng):
    x, z, _ = random_survival(rng, 10, 2)
    d = np.zeros(10, dtype=int)
    d[0] = 1
    folds = np.arange(10) % 2
    with pytest.raises(TuningError):
        cv_select_lambda(SurvivalDataset(z, d, x), "lasso", k_folds=2, folds=folds)


def test_support_refit_matches_newton(rng):
    x, z, d = random_survival(rng, 40, 5)
    sd = SortedDesign(x, build_failure_index(z, d))
    th = support_refit(sd, [1, 3])
    assert np.all(th[[0, 2, 4]] == 0)
    np.testing.assert_allclose(th[[1, 3]], newton_mle(x[:, [1, 3]], z, d), atol=1e-6)
    assert np.all(support_refit(sd, []) == 0)


def test_pure_noise_selects_small_models():
    rng = np.random.default_rng(8)
    sizes = []
    for _ in range(10):
        x = rng.standard_normal((200, 50))
        z = rng.exponential(size=200)
        c = rng.exponential(1 / (3 / 7), size=200)
        fit = fit_procedure("lasso", SurvivalDataset(np.minimum(z, c), (z <= c).astype(int), x), seed=1)
        sizes.append(np.count_nonzero(fit.beta))
    assert np.mean(sizes) <= 1.0


def test_bad_criterion(rng):
    x, z, d = random_survival(rng, 20, 2)
    with pytest.raises(ValueError):
        cv_select_lambda(SurvivalDataset(z, d, x), "lasso", criterion="aic")
    with pytest.raises(ValueError):
        cv_select_lambda(SurvivalDataset(z, d, x), "scad")
