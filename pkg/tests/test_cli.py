import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from farmhazard.cli import main
from farmhazard.data import SurvivalDataset, load_csv
from farmhazard.protocol import effective_weights, prepare, repeated_split, split_rows
from farmhazard.simulation import SimConfig, replication_rng, simulate_dataset
from farmhazard.solver import fit_procedure


def write_dataset(path, ds, names=None):
    names = names or [f"g{j}" for j in range(ds.p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "status"] + names)
        for i in range(ds.n):
            w.writerow([repr(float(ds.z[i])), int(ds.delta[i])] + [repr(float(v)) for v in ds.x[i]])
    return path


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    cfg = SimConfig(n=120, p=30, k=2, value_law="fixed", beta_value=1.0)
    ds, _, _ = simulate_dataset(cfg, replication_rng(3, 0))
    return write_dataset(tmp_path_factory.mktemp("d") / "data.csv", ds)


def run(argv):
    return main([str(a) for a in argv])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


BASE = ["--time", "time", "--status", "status"]


def test_fit_happy_path(data_csv, tmp_path):
    out = tmp_path / "fit"
    assert run(["fit", "--method", "farmhazard-l", "--csv", data_csv, *BASE, "--cv", 10, "--seed", 7,
                "--out", out]) == 0
    rows = read_rows(out / "coefficients.csv")
    assert any(r["name"].startswith("factor_") for r in rows)
    info = json.loads((out / "fit.json").read_text())
    assert info["lambda_source"] == "cv" and info["converged"] and info["k_hat"] is not None
    assert info["kkt_max_violation"] < info["kkt_tolerance"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 7 and man["command"] == "fit"
    assert len(man["inputs"]) == 1 and len(next(iter(man["inputs"].values()))) == 64
    assert sorted(p.name for p in out.iterdir()) == ["coefficients.csv", "fit.json", "manifest.json",
                                                     "risk_weights.csv"]


def test_fit_rerun_byte_identical(data_csv, tmp_path):
    for name in ("a", "b"):
        assert run(["fit", "--method", "lasso", "--csv", data_csv, *BASE, "--cv", 5, "--seed", 3,
                    "--out", tmp_path / name]) == 0
    for f in ("coefficients.csv", "risk_weights.csv", "fit.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_fit_lambda_override(data_csv, tmp_path):
    assert run(["fit", "--method", "lasso", "--csv", data_csv, *BASE, "--lambda", 0.25, "--out", tmp_path]) == 0
    info = json.loads((tmp_path / "fit.json").read_text())
    assert info["lambda"] == 0.25 and info["lambda_source"] == "user" and "cv" not in info


def test_missing_status_column(data_csv, tmp_path, capsys):
    code = run(["fit", "--method", "lasso", "--csv", data_csv, "--time", "time", "--status", "vital",
                "--out", tmp_path])
    assert code == 2
    assert "'vital'" in capsys.readouterr().err


def test_bad_method_and_missing_file(data_csv, tmp_path):
    assert run(["fit", "--method", "ridge", "--csv", data_csv, *BASE, "--out", tmp_path]) == 2
    assert run(["fit", "--method", "lasso", "--csv", tmp_path / "nope.csv", *BASE, "--out", tmp_path]) == 2


def test_nonconvergence_exit_code(data_csv, tmp_path, monkeypatch):
    import farmhazard.solver as solver

    real = solver._solve

    def capped(*a, **kw):
        kw["max_outer"] = 1
        kw["tol"] = 1e-300
        return real(*a, **kw)

    monkeypatch.setattr(solver, "_solve", capped)
    assert run(["fit", "--method", "lasso", "--csv", data_csv, *BASE, "--lambda", 0.01, "--out", tmp_path]) == 3


def test_screen_commands(data_csv, tmp_path):
    assert run(["screen", "--csv", data_csv, *BASE, "--top-d", 7, "--out", tmp_path / "a"]) == 0
    assert len(read_rows(tmp_path / "a" / "selected.csv")) == 7
    ranking = read_rows(tmp_path / "a" / "ranking.csv")
    assert len(ranking) == 30 and ranking[0]["rank"] == "1"
    assert run(["screen", "--csv", data_csv, *BASE, "--threshold", 0, "--out", tmp_path / "b"]) == 0
    assert len(read_rows(tmp_path / "b" / "selected.csv")) == 30
    assert run(["screen", "--csv", data_csv, *BASE, "--baseline", "sis", "--top-d", 5, "--out", tmp_path / "c"]) == 0
    man = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert man["config"]["baseline"] == "sis"
    assert run(["screen", "--csv", data_csv, *BASE, "--out", tmp_path / "d"]) == 2


def test_screen_wide_matrix(tmp_path):
    rng = np.random.default_rng(0)
    n, p = 40, 2000
    x = rng.standard_normal((n, p))
    z = rng.exponential(size=n)
    ds = SurvivalDataset(z, np.ones(n, dtype=int), x)
    path = write_dataset(tmp_path / "wide.csv", ds)
    assert run(["screen", "--csv", path, *BASE, "--top-d", 1500, "--out", tmp_path / "o"]) == 0
    assert len(read_rows(tmp_path / "o" / "selected.csv")) == 1500


def test_simulate_invalid_rho(tmp_path):
    assert run(["simulate", "--preset", "table2", "--set", "rho=1.2", "--out", tmp_path]) == 2


def test_simulate_config_file(tmp_path):
    doc = {"base": {"setting": "equicorrelated", "n": 60, "p": 20, "rho": 0.5, "replications": 2, "seed": 1,
                    "methods": ["lasso", "farmhazard_l"], "k_folds": 3, "label": "tiny"},
           "sweep": [{"rho": 0.0}, {"rho": 0.5}], "x_field": "rho"}
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert run(["simulate", "--config", cfg, "--out", out]) == 0
    rows = read_rows(out / "report.csv")
    assert len(rows) == 4 and {r["method"] for r in rows} == {"lasso", "farmhazard_l"}
    assert len(read_rows(out / "series.csv")) == 4
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["config"]["resolved"]) == 2
    out2 = tmp_path / "o2"
    assert run(["simulate", "--config", cfg, "--out", out2, "--threads", 2]) == 0
    assert (out / "report.csv").read_bytes() == (out2 / "report.csv").read_bytes()
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["simulate", "--config", bad, "--out", tmp_path / "x"]) == 2


def test_simulate_fig3_files(tmp_path):
    out = tmp_path / "f3"
    assert run(["simulate", "--preset", "fig3", "--replications", 2, "--set", "p=80", "--set", "n=60",
                "--out", out]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"report.csv", "report.json", "roc.csv", "screening_series.csv", "manifest.json"} <= names
    rep = read_rows(out / "report.csv")
    assert {"sure_rate", "fnr_mean"} <= set(rep[0])
    series = read_rows(out / "screening_series.csv")
    assert len(series) == 2 * 80
    last = [r for r in series if r["d"] == "80"]
    assert all(float(r["sure_rate"]) == 1.0 and float(r["fnr_mean"]) == 0.0 for r in last)


def test_evaluate_perfect_separation(tmp_path):
    z = np.arange(1.0, 11.0)
    x = -z.reshape(-1, 1)
    path = write_dataset(tmp_path / "toy.csv", SurvivalDataset(z, np.ones(10, dtype=int), x), ["g"])
    w = tmp_path / "w.csv"
    w.write_text("name,weight,center,scale\ng,1,0,1\n")
    assert run(["evaluate", "--csv", path, *BASE, "--coefficients", w, "--out", tmp_path / "o"]) == 0
    assert float(read_rows(tmp_path / "o" / "cindex.csv")[0]["c_index"]) == 1.0


def test_evaluate_with_fit_weights_matches_library(data_csv, tmp_path):
    assert run(["fit", "--method", "farmhazard-l", "--csv", data_csv, *BASE, "--lambda", 0.05, "--k", 2,
                "--out", tmp_path / "f"]) == 0
    assert run(["evaluate", "--csv", data_csv, *BASE, "--coefficients", tmp_path / "f" / "risk_weights.csv",
                "--out", tmp_path / "e"]) == 0
    ci = float(read_rows(tmp_path / "e" / "cindex.csv")[0]["c_index"])
    from farmhazard.metrics import c_index

    ds = load_csv(data_csv, "time", "status")
    fit = fit_procedure("farmhazard_l", ds, k=2, lam=0.05)
    assert ci == pytest.approx(c_index(fit.risk_scores(ds.x), ds.z, ds.delta), abs=1e-12)


def test_evaluate_split_deterministic(data_csv, tmp_path):
    args = ["evaluate", "--csv", data_csv, *BASE, "--split", 0.8, "--repeats", 1, "--seed", 7, "--screen-top", 15,
            "--cv", 5]
    assert run(args + ["--out", tmp_path / "a"]) == 0
    assert run(args + ["--out", tmp_path / "b"]) == 0
    for f in ("cindex_repeats.csv", "cindex_summary.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    ra = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(ra["result"]["test_rows"][0]) == 24
    assert run(["evaluate", "--csv", data_csv, *BASE, "--out", tmp_path / "c"]) == 2


def test_console_script_runs(tmp_path):
    res = subprocess.run([sys.executable, "-m", "farmhazard.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
    res = subprocess.run([sys.executable, "-m", "farmhazard.cli", "simulate", "--preset", "table2", "--set",
                          "rho=1.2", "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 2 and "rho" in res.stderr


def test_effective_weights_reproduce_risk(rng):
    x = rng.standard_normal((50, 8)) + rng.standard_normal((50, 1)) @ rng.standard_normal((1, 8))
    z = rng.exponential(size=50)
    ds = SurvivalDataset(z, np.ones(50, dtype=int), x)
    fit = fit_procedure("farmhazard_l", ds, k=1, lam=0.02)
    c = effective_weights(fit)
    new = rng.standard_normal((10, 8))
    diff = fit.risk_scores(new) - new @ c
    assert np.ptp(diff) < 1e-10


def test_prepare_and_split(rng):
    x = rng.standard_normal((12, 3))
    x[2, 1] = np.nan
    x[:, 2] = 4.0
    z = rng.exponential(size=12)
    z[[0, 5]] = 0.0
    prep = prepare(SurvivalDataset(z, np.ones(12, dtype=int), x))
    assert prep.dropped_rows == (0, 5)
    assert prep.dropped_columns == ("x3",)
    assert prep.dataset.n == 10 and prep.dataset.p == 2
    tr, te = split_rows(10, 0.8, np.random.default_rng(0))
    assert len(tr) == 8 and len(te) == 2 and not set(tr) & set(te)
    with pytest.raises(ValueError):
        split_rows(10, 1.0, np.random.default_rng(0))


def test_repeated_split_summary(data_csv):
    ds = prepare(load_csv(data_csv, "time", "status")).dataset
    rep = repeated_split(ds, repeats=2, seed=1, methods=["lasso"], screen_top=None, cv_folds=3)
    s = rep.summary()["lasso"]
    assert s["n"] == 2 and 0.5 < s["mean"] <= 1.0 and s["se"] >= 0
