import json

import numpy as np
import pytest
from scipy import stats

from farmhazard.simulation import (PRESETS, ConfigError, SimConfig, SimulationError, expand_configs, format_float,
                                   gen_equicorrelated, gen_factor_design, gen_survival, load_preset, run_experiment,
                                   series_rows)


def test_factor_design_variance():
    rng = np.random.default_rng(0)
    v = [gen_factor_design(200, 100, 3, rng)[0].var(axis=0, ddof=1).mean() for _ in range(100)]
    assert np.mean(v) == pytest.approx(5.0, rel=0.05)
    x, f, u, b = gen_factor_design(50, 20, 0, rng)
    assert f.shape == (50, 0)
    np.testing.assert_array_equal(x, u)


def test_factor_design_seeded():
    a = gen_factor_design(30, 10, 3, np.random.default_rng(4))[0]
    b = gen_factor_design(30, 10, 3, np.random.default_rng(4))[0]
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("rho", [0.0, 0.8])
def test_equicorrelated_moments(rho):
    x = gen_equicorrelated(2000, 30, rho, np.random.default_rng(1))
    c = np.corrcoef(x, rowvar=False)
    off = c[~np.eye(30, dtype=bool)].mean()
    assert abs(off - rho) < 0.03
    np.testing.assert_allclose(x.var(axis=0, ddof=1), 1.0, atol=0.1)


def test_equicorrelated_rejects_rho():
    with pytest.raises(ConfigError):
        gen_equicorrelated(10, 3, 1.2, np.random.default_rng(0))


def test_survival_null_distribution():
    rng = np.random.default_rng(2)
    z, d = gen_survival(np.zeros((20000, 2)), np.zeros(2), rng)
    assert stats.kstest(z, "expon", args=(0, 1 / (10 / 7))).pvalue > 0.01
    assert 1 - d.mean() == pytest.approx(0.3, abs=0.01)


def test_censoring_free_of_linear_predictor():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((30000, 3))
    z, d = gen_survival(x, np.array([1.0, -1.0, 0.5]), rng)
    lp = x @ np.array([1.0, -1.0, 0.5])
    bins = np.quantile(lp, [0, 0.25, 0.5, 0.75, 1])
    rates = [1 - d[(lp >= lo) & (lp <= hi)].mean() for lo, hi in zip(bins[:-1], bins[1:])]
    assert max(rates) - min(rates) < 0.03


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(rho=1.2)
    with pytest.raises(ConfigError):
        SimConfig(methods=("lasso", "ridge"))
    with pytest.raises(ConfigError):
        SimConfig(setting="screening", methods=("lasso",))
    with pytest.raises(ConfigError):
        SimConfig.from_dict({"n": 100, "colour": "red"})
    cfg = SimConfig(methods=("enet", "farmhazard-l"))
    assert cfg.methods == ("elastic_net", "farmhazard_l")
    assert SimConfig.from_dict(cfg.to_dict()) == cfg


def test_presets_expand():
    for name in PRESETS:
        doc = load_preset(name)
        cfgs = expand_configs(doc)
        assert cfgs
    t2 = expand_configs(load_preset("table2"))
    assert sorted({c.rho for c in t2}) == [0.0, 0.4, 0.8]
    assert all(len(c.methods) == 5 for c in t2)
    assert expand_configs(load_preset("fig3"))[0].setting == "screening"
    with pytest.raises(ConfigError):
        load_preset("table9")


SMALL = SimConfig(setting="factor", n=80, p=40, k=2, value_law="fixed", beta_value=1.0, replications=2, seed=5,
                  methods=("lasso", "farmhazard_l"), k_folds=5, test_n=40)


def test_report_deterministic_and_thread_independent():
    a = run_experiment(SMALL, n_jobs=1)
    b = run_experiment(SMALL, n_jobs=1)
    c = run_experiment(SMALL, n_jobs=2)
    assert a.to_json() == b.to_json() == c.to_json()
    assert a.to_csv() == c.to_csv()
    row = a.row("lasso")
    assert row.sign_rate.n == 2
    assert np.isfinite(row.c_index_mean)


def test_report_float_format():
    assert format_float(0.1) == "0.10000000000000001"
    assert float(format_float(1 / 3)) == 1 / 3
    assert format_float(3) == "3"


def test_failures_abort(monkeypatch):
    import farmhazard.simulation as sim

    def boom(config, rep):
        raise RuntimeError("synthetic")

    monkeypatch.setattr(sim, "run_replication", boom)
    with pytest.raises(SimulationError) as err:
        run_experiment(SMALL)
    assert err.value.report is not None and len(err.value.report.failures) == 2


def test_screening_report_and_series():
    cfg = SimConfig(setting="screening", n=100, p=60, k=2, value_law="fixed", beta_value=1.0, u_var=1.0,
                    replications=2, seed=1, methods=("augmented", "sis"), top_d=10)
    rep = run_experiment(cfg)
    assert rep.row("augmented").sure_rate is not None
    assert set(rep.roc) == {"augmented", "sis"}
    assert rep.roc["augmented"].shape == (60, 2)
    rows = series_rows([rep], "p")
    assert {r["method"] for r in rows} == {"augmented", "sis"}
    json.loads(rep.to_json(include_records=True))


def test_threads_env(monkeypatch):
    from farmhazard.simulation import resolve_threads

    monkeypatch.setenv("FARMHAZARD_THREADS", "3")
    assert resolve_threads() == 3
    assert resolve_threads(1) == 1
    monkeypatch.setenv("FARMHAZARD_THREADS", "x")
    with pytest.raises(ConfigError):
        resolve_threads()


def test_presets_match_schema():
    jsonschema = pytest.importorskip("jsonschema")
    from importlib import resources

    schema = json.loads(resources.files("farmhazard").joinpath("presets/schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    for name in PRESETS:
        jsonschema.validate(load_preset(name), schema)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"base": {"n": 100, "colour": "red"}}, schema)
    # every schema field is a real config field
    assert set(schema["$defs"]["config"]["properties"]) == set(SimConfig().to_dict())
