"""Simulation designs and the replication harness.

Every replication draws its own generator from ``SeedSequence([seed, rep])``
so a report depends only on the configuration, never on how replications
are scheduled across workers.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .cox import irrepresentable_stat, score_at_truth
from .data import SurvivalDataset, build_failure_index
from .factors import decompose, estimate_num_factors_act
from .metrics import (BinomialCI, c_index, mean_pm_2se, model_size,
                      screening_metrics, sign_consistency, wilson_interval)
from .screening import screen, sis_baseline
from .solver import METHODS, fit_procedure, normalize_method

log = logging.getLogger(__name__)

SETTINGS = ("factor", "equicorrelated", "screening")
SCREENING_METHODS = ("augmented", "sis")
MAX_FAILURE_FRACTION = 0.01


class SimulationError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """One simulation design.

    ``value_law`` is ``"fixed"`` (all nonzero coefficients equal
    ``beta_value``) or ``"uniform"`` (drawn from ``[beta_low, beta_high]``
    per replication). Censoring is exponential with rate proportional to the
    event rate, with the proportionality chosen to hit
    ``censor_rate_target``.
    """

    setting: str = "factor"
    n: int = 200
    p: int = 500
    k: int = 3
    rho: float = 0.0
    support_size: int = 4
    value_law: str = "uniform"
    beta_value: float = 2.0
    beta_low: float = 2.0
    beta_high: float = 5.0
    u_var: float = 2.0
    censor_rate_target: float = 0.3
    replications: int = 200
    seed: int = 0
    methods: tuple = METHODS
    k_folds: int = 10
    criterion: str = "sparse"
    rule: str = "1se"
    top_d: int = 50
    test_n: int = 0
    label: str = ""

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if not 0 <= self.rho < 1:
            raise ConfigError(f"rho must satisfy 0 <= rho < 1, got {self.rho}")
        if self.n < 4 or self.p < 1:
            raise ConfigError("need n >= 4 and p >= 1")
        if not 0 <= self.support_size <= self.p:
            raise ConfigError(f"support_size={self.support_size} outside [0, p={self.p}]")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.k < 0:
            raise ConfigError("k must be nonnegative")
        if self.value_law not in ("fixed", "uniform"):
            raise ConfigError("value_law must be 'fixed' or 'uniform'")
        if not 0 < self.censor_rate_target < 1:
            raise ConfigError("censor_rate_target must lie in (0, 1)")
        if self.u_var <= 0:
            raise ConfigError("u_var must be positive")
        methods = tuple(self.methods)
        if self.setting == "screening":
            bad = [m for m in methods if m not in SCREENING_METHODS]
            if bad:
                raise ConfigError(f"screening methods must be among {SCREENING_METHODS}, got {bad}")
        else:
            try:
                methods = tuple(normalize_method(m) for m in methods)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        object.__setattr__(self, "methods", methods)

    @property
    def censor_ratio(self) -> float:
        c = self.censor_rate_target
        return c / (1 - c)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d


def gen_factor_design(n: int, p: int, k: int, rng: np.random.Generator, u_var: float = 2.0):
    """``X = F B' + U`` with standard normal loadings and factors; returns ``(X, F, U, B)``."""
    b = rng.standard_normal((p, k))
    f = rng.standard_normal((n, k))
    u = rng.normal(scale=math.sqrt(u_var), size=(n, p))
    return f @ b.T + u, f, u, b


def gen_equicorrelated(n: int, p: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Rows from ``N(0, Sigma_rho)`` via one shared standard normal factor."""
    if not 0 <= rho < 1:
        raise ConfigError(f"rho must satisfy 0 <= rho < 1, got {rho}")
    g = rng.standard_normal((n, 1))
    return math.sqrt(rho) * g + math.sqrt(1 - rho) * rng.standard_normal((n, p))


def gen_survival(x, beta_star, rng: np.random.Generator, censor_ratio: float = 3 / 7):
    """Exponential event times with rate ``exp(x'beta)`` and censoring rate ``censor_ratio`` times that."""
    lp = np.asarray(x, dtype=float) @ np.asarray(beta_star, dtype=float)
    if not np.all(np.isfinite(lp)):
        raise ValueError("non-finite linear predictor")
    rate = np.exp(lp)
    t = rng.exponential(1.0 / rate)
    c = rng.exponential(1.0 / (censor_ratio * rate))
    return np.minimum(t, c), (t <= c).astype(np.int64)


def draw_beta(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    beta = np.zeros(config.p)
    s = config.support_size
    if config.value_law == "fixed":
        beta[:s] = config.beta_value
    else:
        beta[:s] = rng.uniform(config.beta_low, config.beta_high, size=s)
    return beta


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep)]))


def draw_design(config: SimConfig, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    n = config.n if n is None else n
    if config.setting == "equicorrelated":
        return gen_equicorrelated(n, config.p, config.rho, rng)
    return gen_factor_design(n, config.p, config.k, rng, config.u_var)[0]


def simulate_dataset(config: SimConfig, rng: np.random.Generator, extra_rows: int = 0):
    """Covariates, coefficients and survival outcomes for one replication.

    Returns ``(dataset, beta_star, test)`` where ``test`` is ``None`` or a
    held-out dataset of ``extra_rows`` rows drawn from the same design.
    """
    beta = draw_beta(config, rng)
    x = draw_design(config, rng, config.n + extra_rows)
    z, delta = gen_survival(x, beta, rng, config.censor_ratio)
    train = SurvivalDataset(z[:config.n], delta[:config.n], x[:config.n])
    test = None
    if extra_rows:
        test = SurvivalDataset(z[config.n:], delta[config.n:], x[config.n:])
    return train, beta, test


def _fit_methods(config: SimConfig, ds: SurvivalDataset, cv_seed: int) -> dict:
    fits = {}
    k_hat = None

    def get(method):
        nonlocal k_hat
        if method in fits:
            return fits[method]
        kw = dict(cv_folds=config.k_folds, seed=cv_seed, criterion=config.criterion, rule=config.rule)
        if method.startswith("farmhazard") and k_hat is None:
            k_hat = estimate_num_factors_act(ds.x)
        if method == "scad":
            fit = fit_procedure("scad", ds, initializer=get("lasso").beta, **kw)
        elif method == "farmhazard_s":
            fit = fit_procedure("farmhazard_s", ds, k=k_hat, initializer=get("farmhazard_l").beta, **kw)
        else:
            fit = fit_procedure(method, ds, k=k_hat if method.startswith("farmhazard") else None, **kw)
        fits[method] = fit
        return fit

    for m in config.methods:
        get(m)
    return fits


def run_replication(config: SimConfig, rep: int) -> dict:
    """One replication: data, fits (or screens) and per-method summaries."""
    rng = replication_rng(config.seed, rep)
    ds, beta, test = simulate_dataset(config, rng, config.test_n)
    cv_seed = int(rng.integers(2**31 - 1))
    out = {"rep": rep, "censor_rate": float(1 - ds.delta.mean()), "methods": {}}
    if config.setting == "screening":
        truth = np.flatnonzero(beta)
        for m in config.methods:
            res = screen(ds, top_d=config.top_d) if m == "augmented" else sis_baseline(ds, top_d=config.top_d)
            out["methods"][m] = {
                "sure": bool(set(truth) <= set(res.selected.tolist())),
                "selected": res.selected.tolist(),
                "ranking": res.ranking.tolist(),
                "k": res.k,
            }
        return out
    fits = _fit_methods(config, ds, cv_seed)
    for m in config.methods:
        fit = fits[m]
        rec = {
            "sign": sign_consistency(fit.beta, beta),
            "size": model_size(fit.beta),
            "lambda": fit.lam,
            "k": fit.k,
            "converged": bool(fit.fit.converged),
        }
        if test is not None:
            try:
                rec["c_index"] = c_index(fit.risk_scores(test.x), test.z, test.delta)
            except ValueError:
                rec["c_index"] = float("nan")
        out["methods"][m] = rec
    return out


@dataclass
class MethodRow:
    method: str
    sign_rate: Optional[BinomialCI] = None
    size_mean: float = float("nan")
    size_2se: float = float("nan")
    c_index_mean: float = float("nan")
    c_index_2se: float = float("nan")
    sure_rate: Optional[BinomialCI] = None
    fnr_mean: float = float("nan")

    def to_dict(self) -> dict:
        d = {"method": self.method}
        for name in ("sign_rate", "sure_rate"):
            ci = getattr(self, name)
            if ci is not None:
                d[name] = ci.rate
                d[name + "_lower"] = ci.lower
                d[name + "_upper"] = ci.upper
        for name in ("size_mean", "size_2se", "c_index_mean", "c_index_2se", "fnr_mean"):
            v = getattr(self, name)
            if not (isinstance(v, float) and math.isnan(v)):
                d[name] = v
        return d


@dataclass
class ExperimentReport:
    config: SimConfig
    rows: List[MethodRow]
    records: List[dict] = field(repr=False, default_factory=list)
    failures: List[tuple] = field(default_factory=list)
    roc: Optional[Dict[str, np.ndarray]] = field(repr=False, default=None)

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    @property
    def mean_censor_rate(self) -> float:
        return float(np.mean([r["censor_rate"] for r in self.records])) if self.records else float("nan")

    def to_dict(self, include_records: bool = False) -> dict:
        d = {
            "config": self.config.to_dict(),
            "rows": [r.to_dict() for r in self.rows],
            "n_completed": len(self.records),
            "failures": [{"rep": rep, "error": msg} for rep, msg in self.failures],
            "mean_censor_rate": self.mean_censor_rate,
        }
        if include_records:
            d["records"] = [_strip_rankings(r) for r in self.records]
        return d

    def to_json(self, include_records: bool = False) -> str:
        return json.dumps(self.to_dict(include_records), indent=2, default=_json_default)

    def to_csv(self) -> str:
        rows = [r.to_dict() for r in self.rows]
        cols = ["method"] + sorted({c for r in rows for c in r} - {"method"})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label"] + cols)
        for r in rows:
            w.writerow([self.config.label] + [format_float(r.get(c, "")) for c in cols])
        return buf.getvalue()


def _strip_rankings(rec: dict) -> dict:
    out = dict(rec)
    out["methods"] = {m: {k: v for k, v in r.items() if k != "ranking"} for m, r in rec["methods"].items()}
    return out


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def format_float(v) -> str:
    """Round-trip (17 significant digit) text for floats, plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def summarize(config: SimConfig, records: Sequence[dict], failures=()) -> ExperimentReport:
    rows = []
    roc = None
    if config.setting == "screening":
        roc = {}
        truth = list(range(config.support_size))
        for m in config.methods:
            sel = [r["methods"][m]["selected"] for r in records]
            ranks = [r["methods"][m]["ranking"] for r in records]
            sm = screening_metrics(sel, truth, config.p, ranks)
            k = sum(r["methods"][m]["sure"] for r in records)
            rows.append(MethodRow(m, sure_rate=wilson_interval(k, len(records)) if records else None,
                                  fnr_mean=sm["fnr_mean"]))
            roc[m] = sm["roc_points"]
    else:
        for m in config.methods:
            recs = [r["methods"][m] for r in records]
            k = sum(r["sign"] for r in recs)
            size_mean, size_2se = mean_pm_2se([r["size"] for r in recs])
            ci = [r["c_index"] for r in recs if "c_index" in r and np.isfinite(r["c_index"])]
            c_mean, c_2se = mean_pm_2se(ci) if ci else (float("nan"), float("nan"))
            rows.append(MethodRow(m, wilson_interval(k, len(recs)) if recs else None, size_mean, size_2se,
                                  c_mean, c_2se))
    return ExperimentReport(config, rows, list(records), list(failures), roc)


def _run_one(config: SimConfig, rep: int):
    try:
        return rep, run_replication(config, rep), None
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


def run_experiment(config: SimConfig, methods: Optional[Sequence[str]] = None, *, n_jobs: Optional[int] = None,
                   progress: Optional[Callable[[int, int], None]] = None) -> ExperimentReport:
    """Run all replications of ``config`` and aggregate them.

    Replications that raise are recorded and excluded; if they make up
    ``MAX_FAILURE_FRACTION`` or more of the total a :class:`SimulationError`
    carrying the partial report is raised. ``n_jobs`` defaults to
    ``FARMHAZARD_THREADS`` or 1.
    """
    if methods is not None:
        config = replace(config, methods=tuple(methods))
    n_jobs = resolve_threads(n_jobs)
    reps = range(config.replications)
    if n_jobs == 1:
        results = []
        for i in reps:
            results.append(_run_one(config, i))
            if progress is not None:
                progress(i + 1, config.replications)
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_run_one)(config, i) for i in reps)
    results.sort(key=lambda t: t[0])
    records = [r for _, r, err in results if err is None]
    failures = [(rep, err) for rep, _, err in results if err is not None]
    for rep, err in failures:
        log.warning("replication %d failed: %s", rep, err)
    report = summarize(config, records, failures)
    if len(failures) >= MAX_FAILURE_FRACTION * config.replications and failures:
        raise SimulationError(
            f"{len(failures)} of {config.replications} replications failed (limit below "
            f"{MAX_FAILURE_FRACTION:.0%})", report)
    return report


def resolve_threads(n_jobs: Optional[int] = None) -> int:
    if n_jobs is None:
        env = os.environ.get("FARMHAZARD_THREADS")
        if env:
            try:
                n_jobs = int(env)
            except ValueError as exc:
                raise ConfigError(f"FARMHAZARD_THREADS must be an integer, got {env!r}") from exc
        else:
            n_jobs = 1
    if n_jobs < 1:
        raise ConfigError("thread count must be at least 1")
    return n_jobs


# presets ---------------------------------------------------------------------

PRESETS = ("table1", "table2", "fig1", "fig2", "fig3")


def load_preset(name: str) -> dict:
    """Preset document: ``{"description", "base", "sweep"}`` where ``sweep`` lists config overrides."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")
    text = resources.files("farmhazard").joinpath("presets").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def expand_configs(doc: dict, overrides: Optional[dict] = None) -> List[SimConfig]:
    """All configurations of a preset (or user) document, with ``overrides`` applied last."""
    if not isinstance(doc, dict) or "base" not in doc:
        raise ConfigError("config document needs a 'base' object")
    base = dict(doc["base"])
    sweep = doc.get("sweep") or [{}]
    if not isinstance(sweep, list):
        raise ConfigError("'sweep' must be a list of override objects")
    out = []
    for item in sweep:
        d = {**base, **item, **(overrides or {})}
        out.append(SimConfig.from_dict(d))
    return out


def series_rows(reports: Sequence[ExperimentReport], x_field: str) -> List[dict]:
    """Figure series: one row per (x value, method)."""
    rows = []
    for rep in reports:
        x = getattr(rep.config, x_field)
        for r in rep.rows:
            rows.append({"label": rep.config.label, x_field: x, **r.to_dict()})
    return rows


def screening_curve_rows(report: ExperimentReport, d_max: Optional[int] = None) -> List[dict]:
    """Sure screening rate (Wilson interval) and false negative rate (+/- 2 SE) against ``d``.

    Computed from the stored full rankings for every ``d`` in ``1..d_max``
    (default ``min(p, 4 * top_d)``).
    """
    cfg = report.config
    if cfg.setting != "screening" or not report.records:
        return []
    d_max = min(cfg.p, 4 * cfg.top_d) if d_max is None else min(d_max, cfg.p)
    s = cfg.support_size
    rows = []
    for m in cfg.methods:
        ranks = np.array([r["methods"][m]["ranking"] for r in report.records])
        pos = np.zeros((len(ranks), s), dtype=int)
        for i, rk in enumerate(ranks):
            where = np.empty(cfg.p, dtype=int)
            where[rk] = np.arange(cfg.p)
            pos[i] = where[:s]
        for d in range(1, d_max + 1):
            found = pos < d
            ci = wilson_interval(int(found.all(axis=1).sum()), len(ranks))
            fnr_mean, fnr_2se = mean_pm_2se(1 - found.mean(axis=1))
            rows.append({"label": cfg.label, "method": m, "d": d, "sure_rate": ci.rate,
                         "sure_rate_lower": ci.lower, "sure_rate_upper": ci.upper,
                         "fnr_mean": fnr_mean, "fnr_2se": fnr_2se})
    return rows


def roc_rows(report: ExperimentReport) -> List[dict]:
    rows = []
    for m, pts in (report.roc or {}).items():
        for d, (fpr, tpr) in enumerate(pts, start=1):
            rows.append({"method": m, "d": d, "fpr": float(fpr), "tpr": float(tpr)})
    return rows


# theory diagnostics ------------------------------------------------------------

def _augmented_truth(ds: SurvivalDataset, beta):
    # centered X = F B' + U, so X beta = U beta + F (B' beta) up to a shift
    dec = decompose(ds.x, estimate_num_factors_act(ds.x))
    theta = np.concatenate([beta, dec.b_hat.T @ beta])
    return dec, theta


def eta_replication(config: SimConfig, rep: int) -> float:
    """Score sup-norm at the truth on the estimated augmented design."""
    rng = replication_rng(config.seed, rep)
    ds, beta, _ = simulate_dataset(config, rng)
    dec, _ = _augmented_truth(ds, beta)
    return score_at_truth(dec.augmented(), ds.x, beta, build_failure_index(ds.z, ds.delta))


def irrepresentable_replication(config: SimConfig, rep: int) -> dict:
    """Irrepresentable statistic at the truth on the raw and on the augmented design.

    On the augmented design the support holds the true covariates and the
    factor coordinates, with factor coefficients ``B' beta*``.
    """
    rng = replication_rng(config.seed, rep)
    ds, beta, _ = simulate_dataset(config, rng)
    index = build_failure_index(ds.z, ds.delta)
    support = np.flatnonzero(beta)
    raw = irrepresentable_stat(ds.x, beta, support, index)
    dec, theta = _augmented_truth(ds, beta)
    aug_support = np.concatenate([support, ds.p + np.arange(dec.k)])
    aug = irrepresentable_stat(dec.augmented(), theta, aug_support, index)
    return {"raw": raw, "augmented": aug, "k": dec.k}
