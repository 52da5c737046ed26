"""Command-line interface: ``farmhazard {fit,cv,screen,simulate,evaluate}``.

Every command writes into ``--out`` (created if needed) together with a
``manifest.json`` recording the command line, the resolved configuration,
the seed, the package version, SHA-256 digests of the inputs and the wall
time. Floats in CSV output use 17 significant digits.

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cox import CoxError
from .data import DataError, impute_median, load_csv, standardize
from .metrics import MetricError, c_index
from .protocol import effective_weights, prepare, repeated_split
from .screening import ScreeningFitError, screen, sis_baseline
from .simulation import (PRESETS, ConfigError, SimulationError, expand_configs, format_float, load_preset,
                         resolve_threads, roc_rows, run_experiment, screening_curve_rows,
                         series_rows)
from .solver import METHODS, SolverError, fit_procedure, normalize_method
from .tuning import CRITERIA, RULES, TuningError, cv_select_lambda

log = logging.getLogger("farmhazard")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
CLI_METHODS = ("lasso", "enet", "scad", "farmhazard-l", "farmhazard-s")


class NumericalFailure(RuntimeError):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_float(v) for v in r])


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


class Run:
    """Output directory plus the manifest being assembled for it."""

    def __init__(self, args, argv):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.start = time.time()
        self.manifest = {
            "command": args.command,
            "argv": list(argv),
            "config": {k: v for k, v in vars(args).items() if k not in ("func",)},
            "seed": getattr(args, "seed", None),
            "version": __version__,
            "inputs": {},
            "outputs": [],
        }

    def add_input(self, path):
        self.manifest["inputs"][str(path)] = _sha256(path)

    def path(self, name) -> Path:
        self.manifest["outputs"].append(name)
        return self.out / name

    def finish(self, **extra):
        self.manifest.update(extra)
        self.manifest["timing"] = {"started_unix": self.start, "elapsed_seconds": time.time() - self.start}
        _write_json(self.out / "manifest.json", self.manifest)


def _load(args, run: Run):
    covs = args.covariates.split(",") if getattr(args, "covariates", None) else None
    path = Path(args.csv)
    ds = load_csv(path, args.time, args.status, covs)
    run.add_input(path)
    if args.impute == "median":
        ds = impute_median(ds)
    elif ds.has_missing:
        raise DataError("covariates contain missing values; pass --impute median")
    if getattr(args, "drop_zero_time", False):
        zero = ds.zero_time_rows()
        if zero.size:
            log.info("dropping %d zero follow-up rows", zero.size)
            ds = ds.subset(np.setdiff1d(np.arange(ds.n), zero))
    record = None
    if getattr(args, "standardize", False):
        x, record = standardize(ds.x)
        ds = ds.with_x(x, [ds.names()[j] for j in record.kept])
    return ds, record


def _add_data_args(p, impute=True):
    p.add_argument("--csv", required=True, help="input CSV with a header row")
    p.add_argument("--time", required=True, help="observed time column")
    p.add_argument("--status", required=True, help="event indicator column (1 event, 0 censored)")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    if impute:
        p.add_argument("--impute", choices=("none", "median"), default="none")


def _add_common(p):
    p.add_argument("--out", default="farmhazard-out", help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default FARMHAZARD_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


# fit -------------------------------------------------------------------------

def cmd_fit(args, run: Run) -> int:
    ds, record = _load(args, run)
    method = normalize_method(args.method)
    fit = fit_procedure(method, ds, k=args.k, lam=args.lam, cv_folds=args.cv, seed=args.seed,
                        criterion=args.criterion, rule=args.rule)
    names = ds.names()
    rows = [(names[j], fit.beta[j]) for j in np.flatnonzero(fit.beta)]
    rows += [(f"factor_{i + 1}", g) for i, g in enumerate(fit.gamma)]
    write_csv(run.path("coefficients.csv"), ("name", "coefficient"), rows)
    c = effective_weights(fit)
    center = record.means[record.kept] if record is not None else np.zeros(ds.p)
    scale = record.sds[record.kept] if record is not None else np.ones(ds.p)
    write_csv(run.path("risk_weights.csv"), ("name", "weight", "center", "scale"),
              zip(names, c, center, scale))
    info = {
        "method": method,
        "lambda": fit.lam,
        "lambda_source": "cv" if args.lam is None else "user",
        "kkt_max_violation": fit.fit.kkt_max_violation,
        "kkt_tolerance": fit.fit.kkt_tol,
        "converged": bool(fit.fit.converged),
        "n_iterations": fit.fit.n_iterations,
        "objective": fit.fit.objective,
        "k_hat": fit.k if method.startswith("farmhazard") else None,
        "support_size": int(np.count_nonzero(fit.beta)),
        "n": ds.n, "p": ds.p, "n_events": ds.n_events,
    }
    if fit.cv is not None:
        info["cv"] = {"criterion": fit.cv.criterion, "rule": fit.cv.rule, "folds": args.cv,
                      "lambdas": [format_float(v) for v in fit.cv.lambdas],
                      "curve": [format_float(v) for v in fit.cv.cv_curve]}
    _write_json(run.path("fit.json"), info)
    run.finish()
    if not fit.fit.converged:
        raise NumericalFailure(f"solver did not converge: KKT violation {fit.fit.kkt_max_violation:.3g} "
                               f"above tolerance {fit.fit.kkt_tol:.3g}")
    return EXIT_OK


def cmd_cv(args, run: Run) -> int:
    from .data import dataset_index
    from .solver import ENET_ALPHA, procedure_design

    ds, _ = _load(args, run)
    method = normalize_method(args.method)
    if method in ("scad", "farmhazard_s"):
        raise ConfigError("cv reports the curve for lasso, enet or farmhazard-l; "
                          "scad and farmhazard-s tune inside 'fit'")
    if np.any(ds.z == 0):
        raise DataError("zero follow-up times present; pass --drop-zero-time")
    design, w, _ = procedure_design(method, ds.x, args.k)
    from .cox import SortedDesign

    sd = SortedDesign(design, dataset_index(ds))
    res = cv_select_lambda(ds, design=design, weights=w, alpha=ENET_ALPHA if method == "elastic_net" else 1.0,
                           k_folds=args.cv, seed=args.seed, sorted_design=sd, criterion=args.criterion,
                           rule=args.rule)
    se = res.cv_se if res.cv_se is not None else np.full(len(res.lambdas), np.nan)
    write_csv(run.path("cv_curve.csv"), ("lambda", "score", "se"), zip(res.lambdas, res.cv_curve, se))
    _write_json(run.path("cv.json"), {"lambda_star": res.lambda_star, "index_star": res.index_star,
                                      "criterion": res.criterion, "rule": res.rule})
    run.finish()
    return EXIT_OK


# screen ----------------------------------------------------------------------

def cmd_screen(args, run: Run) -> int:
    if (args.top_d is None) == (args.threshold is None):
        raise ConfigError("give exactly one of --top-d or --threshold")
    ds, _ = _load(args, run)
    if args.baseline == "sis":
        res = sis_baseline(ds, top_d=args.top_d, threshold=args.threshold)
    else:
        res = screen(ds, k=args.k, top_d=args.top_d, threshold=args.threshold)
    names = ds.names()
    write_csv(run.path("ranking.csv"), ("rank", "name", "column", "abs_beta"),
              ((r + 1, names[j], j, res.beta_marginal[j]) for r, j in enumerate(res.ranking)))
    write_csv(run.path("selected.csv"), ("name", "column"), ((names[j], j) for j in res.selected))
    run.finish(result={"k_hat": res.k, "n_selected": int(res.selected.size), "failed_fits": list(res.failed)})
    return EXIT_OK


# simulate --------------------------------------------------------------------

def _parse_set(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value
    return out


def cmd_simulate(args, run: Run) -> int:
    if (args.preset is None) == (args.config is None):
        raise ConfigError("give exactly one of --preset or --config")
    if args.preset is not None:
        doc = load_preset(args.preset)
    else:
        run.add_input(args.config)
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
    overrides = _parse_set(args.set)
    for key in ("replications", "seed"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.methods:
        overrides["methods"] = [m.strip() for m in args.methods.split(",")]
    configs = expand_configs(doc, overrides)
    n_jobs = resolve_threads(args.threads)
    reports = []
    for i, cfg in enumerate(configs):
        log.info("config %d/%d: %s", i + 1, len(configs), cfg.label or cfg.setting)
        try:
            reports.append(run_experiment(cfg, n_jobs=n_jobs))
        except SimulationError as exc:
            if exc.report is not None:
                _write_json(run.out / "report_partial.json", exc.report.to_dict(include_records=True))
            raise
    x_field = doc.get("x_field")
    rows = []
    for rep in reports:
        c = rep.config
        for r in rep.rows:
            rows.append({"label": c.label, "setting": c.setting, "n": c.n, "p": c.p, "rho": c.rho,
                         "mean_censor_rate": rep.mean_censor_rate, **r.to_dict()})
    cols = ["label", "setting", "n", "p", "rho", "method"]
    cols += sorted({k for r in rows for k in r} - set(cols))
    write_csv(run.path("report.csv"), cols, ([r.get(c, "") for c in cols] for r in rows))
    _write_json(run.path("report.json"), {"description": doc.get("description", ""),
                                          "reports": [r.to_dict(include_records=args.records) for r in reports]})
    if x_field:
        srows = series_rows(reports, x_field)
        scols = ["label", x_field, "method"]
        scols += sorted({k for s in srows for k in s} - set(scols))
        write_csv(run.path("series.csv"), scols, ([s.get(c, "") for c in scols] for s in srows))
    if any(r.config.setting == "screening" for r in reports):
        rrows = []
        for rep in reports:
            for r in roc_rows(rep):
                rrows.append((rep.config.label, rep.config.p, r["method"], r["d"], r["fpr"], r["tpr"]))
        write_csv(run.path("roc.csv"), ("label", "p", "method", "d", "fpr", "tpr"), rrows)
        crows = [c for rep in reports for c in screening_curve_rows(rep)]
        ccols = ["label", "method", "d", "sure_rate", "sure_rate_lower", "sure_rate_upper", "fnr_mean", "fnr_2se"]
        write_csv(run.path("screening_series.csv"), ccols, ([c[k] for k in ccols] for c in crows))
    run.manifest["config"]["resolved"] = [c.to_dict() for c in configs]
    run.finish()
    return EXIT_OK


# evaluate --------------------------------------------------------------------

def _read_weights(path):
    names, w, center, scale = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"name", "weight"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns name, weight[, center, scale]")
        for row in reader:
            names.append(row["name"])
            w.append(float(row["weight"]))
            center.append(float(row.get("center") or 0.0))
            scale.append(float(row.get("scale") or 1.0))
    return names, np.array(w), np.array(center), np.array(scale)


def cmd_evaluate(args, run: Run) -> int:
    if (args.coefficients is None) == (args.repeats is None):
        raise ConfigError("give either --coefficients (with a test --csv) or --split/--repeats")
    if args.coefficients is not None:
        names, w, center, scale = _read_weights(args.coefficients)
        run.add_input(args.coefficients)
        args.covariates = ",".join(names)
        ds, _ = _load(args, run)
        risk = ((ds.x - center) / scale) @ w
        ci = c_index(risk, ds.z, ds.delta)
        write_csv(run.path("cindex.csv"), ("n", "n_events", "c_index"), [(ds.n, ds.n_events, ci)])
        run.finish(result={"c_index": ci})
        return EXIT_OK
    ds, _ = _load(args, run)
    prep = prepare(ds)
    methods = [m.strip() for m in args.methods.split(",")]
    report = repeated_split(prep.dataset, train_fraction=args.split, repeats=args.repeats, seed=args.seed,
                            methods=methods, screen_top=args.screen_top, cv_folds=args.cv,
                            progress=lambda i, n: log.info("repeat %d/%d", i, n))
    rows = []
    for r in report.per_repeat:
        for m in report.methods:
            rows.append((r["repeat"], m, r["c_index"][m], r["size"][m]))
    write_csv(run.path("cindex_repeats.csv"), ("repeat", "method", "c_index", "model_size"), rows)
    summ = report.summary()
    write_csv(run.path("cindex_summary.csv"), ("method", "mean", "se", "n"),
              ((m, s["mean"], s["se"], s["n"]) for m, s in summ.items()))
    run.finish(result={"summary": summ, "dropped_zero_time_rows": list(prep.dropped_rows),
                       "dropped_constant_columns": list(prep.dropped_columns),
                       "test_rows": [r["test_rows"] for r in report.per_repeat]})
    return EXIT_OK


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="farmhazard", description="Factor-augmented regularized Cox regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def tuning_args(p):
        p.add_argument("--cv", type=int, default=10, help="number of CV folds")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--k", type=int, default=None, help="number of factors (default: ACT estimate)")
        p.add_argument("--criterion", choices=CRITERIA, default="sparse")
        p.add_argument("--rule", choices=RULES, default="1se")
        p.add_argument("--standardize", action="store_true", help="center and scale covariates first")
        p.add_argument("--drop-zero-time", action="store_true", help="remove rows with zero follow-up")

    p = sub.add_parser("fit", help="fit one procedure")
    _add_data_args(p)
    p.add_argument("--method", required=True, choices=CLI_METHODS + METHODS, metavar="{" + ",".join(CLI_METHODS) + "}")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="fixed lambda (skips CV)")
    tuning_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="cross-validation curve for one procedure")
    _add_data_args(p)
    p.add_argument("--method", required=True, choices=CLI_METHODS + METHODS, metavar="{lasso,enet,farmhazard-l}")
    tuning_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("screen", help="rank covariates by marginal factor-augmented fits")
    _add_data_args(p)
    p.add_argument("--top-d", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--baseline", choices=("augmented", "sis"), default="augmented")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--drop-zero-time", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("simulate", help="run a simulation preset or JSON config")
    p.add_argument("--preset", choices=PRESETS, default=None)
    p.add_argument("--config", default=None, help="JSON document with 'base' and optional 'sweep'")
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--methods", default=None, help="comma-separated method list")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (JSON value)")
    p.add_argument("--records", action="store_true", help="include per-replication records in report.json")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="test-set C-index")
    _add_data_args(p)
    p.add_argument("--coefficients", default=None, help="risk_weights.csv written by 'fit'")
    p.add_argument("--split", type=float, default=0.8, help="training fraction for the repeated-split protocol")
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--screen-top", type=int, default=1500)
    p.add_argument("--methods", default="farmhazard-l,farmhazard-s,lasso")
    p.add_argument("--cv", type=int, default=10)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


INPUT_ERRORS = (DataError, ConfigError, MetricError, FileNotFoundError, PermissionError, ValueError)
NUMERIC_ERRORS = (NumericalFailure, CoxError, SolverError, TuningError, ScreeningFitError, SimulationError,
                  np.linalg.LinAlgError, FloatingPointError, ArithmeticError)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None:
            resolve_threads(args.threads)
        run = Run(args, argv)
        return args.func(args, run)
    except NUMERIC_ERRORS as exc:
        print(f"farmhazard {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"farmhazard {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
