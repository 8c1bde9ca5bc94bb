"""Command-line entry point: ``gsbps fit | diagnose | estimate | simulate``.

Settings resolve as command line > ``GSBPS_<NAME>`` environment variable >
INI config file > built-in default. Exit codes: 0 success, 2 usage,
3 data validation, 4 numerical failure. Failures print a JSON error object
on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import fit_cbps, fit_gsbps, fit_logistic, fit_logistic_s
from .data import ColumnRoles, Dataset, Estimand, load_csv
from .diagnostics import balance_report, diagnostic_matrix, format_value, parse_transforms, write_balance_csv
from .effects import all_effects, write_effects_csv
from .exceptions import DataError, GSBPSError, NumericalError
from .loss import balance_weights
from .simulation import METHODS, OUTCOME_MODELS, PS_MODELS, Scenario, run_monte_carlo
from .solver import SolverSettings
from .tuner import KernelSettings, fit_kgsbps

log = logging.getLogger("gsbps")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _csv_list(value):
    if value is None or isinstance(value, (list, tuple)):
        return value
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


# name -> (config section, converter, default)
OPTIONS = {
    "treatment": ("data", str, "T"),
    "covariates": ("data", _csv_list, None),
    "subgroups": ("data", _csv_list, []),
    "outcome": ("data", str, None),
    "id": ("data", str, None),
    "method": ("fit", str, "gsbps"),
    "estimand": ("fit", str, "ATE"),
    "transforms": ("diagnose", str, ""),
    "tol_score": ("solver", float, 1e-8),
    "max_iter": ("solver", int, 200),
    "ridge": ("solver", float, 1e-10),
    "max_ridge": ("solver", float, 1e-4),
    "theta_bound": ("solver", float, 1e3),
    "solver": ("solver", str, "newton_then_gmm"),
    "variance_threshold": ("kernel", float, 0.99),
    "standardize": ("kernel", _bool, True),
    "n_bandwidths": ("kernel", int, 20),
    "global_threshold": ("kernel", float, 10.0),
    "grid_distance": ("kernel", str, "euclidean"),
    "ps": ("simulate", str, "PS1"),
    "om": ("simulate", _csv_list, None),
    "K": ("simulate", int, 4),
    "n_per_group": ("simulate", _csv_list, ["500"]),
    "reps": ("simulate", int, 100),
    "seed": ("simulate", int, 0),
    "methods": ("simulate", _csv_list, ["logistic", "cbps", "gsbps"]),
    "precision": ("output", str, "6"),
    "threads": ("output", int, None),
}


class UsageError(Exception):
    pass


def resolve(args: argparse.Namespace, config_path=None, environ=None) -> dict:
    """Merge command line, environment, config file and defaults."""
    environ = os.environ if environ is None else environ
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if config_path:
        if not Path(config_path).exists():
            raise DataError(f"config file not found: {config_path}")
        parser.read(config_path, encoding="utf-8")
    out = {}
    for name, (section, convert, default) in OPTIONS.items():
        raw = getattr(args, name, None)
        if raw is None:
            raw = environ.get(f"GSBPS_{name.upper()}")
        if raw is None and parser.has_option(section, name):
            raw = parser.get(section, name)
        try:
            out[name] = default if raw is None else convert(raw)
        except ValueError as exc:
            raise UsageError(f"invalid value for {name}: {exc}") from None
    if out["precision"] not in ("6", "full"):
        raise UsageError("precision must be '6' or 'full'")
    if out["threads"] is None:
        out["threads"] = os.cpu_count() or 1
    if out["threads"] < 1:
        raise UsageError("threads must be >= 1")
    return out


def solver_settings(opts) -> SolverSettings:
    try:
        return SolverSettings(tol_score=opts["tol_score"], max_iter=opts["max_iter"], ridge=opts["ridge"],
                              max_ridge=opts["max_ridge"], theta_bound=opts["theta_bound"],
                              method=opts["solver"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def kernel_settings(opts) -> KernelSettings:
    if opts["grid_distance"] not in ("euclidean", "sqeuclidean"):
        raise UsageError("grid_distance must be 'euclidean' or 'sqeuclidean'")
    return KernelSettings(variance_threshold=opts["variance_threshold"], standardize=opts["standardize"],
                          n_bandwidths=opts["n_bandwidths"], global_threshold=opts["global_threshold"],
                          grid_distance=opts["grid_distance"])


def _estimand(opts) -> Estimand:
    try:
        return Estimand.parse(opts["estimand"])
    except DataError as exc:
        raise UsageError(str(exc)) from None


def load_dataset(path, opts, need_outcome=False) -> Dataset:
    if not opts["covariates"]:
        raise UsageError("no covariate columns given (use --covariates or [data] covariates)")
    roles = ColumnRoles(treatment=opts["treatment"], covariates=tuple(opts["covariates"]),
                        outcome=opts["outcome"], subgroups=tuple(opts["subgroups"] or ()), id=opts["id"])
    if need_outcome and not roles.outcome:
        raise DataError("missing outcome: no outcome column declared")
    return load_csv(path, roles)


def _ids(dataset: Dataset):
    return dataset.metadata.get("ids") or [str(i + 1) for i in range(dataset.n)]


def write_weights_csv(path, dataset: Dataset, fit, precision="6"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "propensity", "w1", "w0"])
        for i, uid in enumerate(_ids(dataset)):
            writer.writerow([uid, format_value(fit.propensities[i], precision),
                             format_value(fit.w1[i], precision), format_value(fit.w0[i], precision)])


def read_weights_csv(path, dataset: Dataset, estimand: Estimand):
    """(w1, w0) aligned to dataset rows; derived from ``propensity`` if weight columns are absent."""
    import pandas as pd

    if not Path(path).exists():
        raise DataError(f"file not found: {path}")
    df = pd.read_csv(path, dtype={"id": str})
    if len(df) != dataset.n:
        raise DataError(f"row-count mismatch: weights have {len(df)} rows, data has {dataset.n}")
    if "id" in df.columns and "ids" in dataset.metadata:
        if list(df["id"]) != list(dataset.metadata["ids"]):
            raise DataError("weights ids do not match data ids row by row")
    if {"w1", "w0"} <= set(df.columns):
        w1, w0 = df["w1"].to_numpy(dtype=float), df["w0"].to_numpy(dtype=float)
    elif "propensity" in df.columns:
        w1, w0 = balance_weights(df["propensity"].to_numpy(dtype=float), estimand)
    else:
        raise DataError("weights file needs w1 and w0 columns or a propensity column")
    if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w0)) and np.all(w1 > 0) and np.all(w0 > 0)):
        raise DataError("weights must be positive and finite")
    return w1, w0


def _fit(method, dataset, estimand, settings, kernel, threads):
    if method == "kgsbps":
        return fit_kgsbps(dataset, estimand, settings, kernel, n_jobs=threads)
    fitter = {"logistic": fit_logistic, "logistic_s": fit_logistic_s, "cbps": fit_cbps, "gsbps": fit_gsbps}
    return fitter[method](dataset, estimand, settings), None


def cmd_fit(args, opts) -> int:
    method = opts["method"]
    if method not in METHODS:
        raise UsageError(f"method must be one of {METHODS}")
    estimand = _estimand(opts)
    dataset = load_dataset(args.data, opts)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prec = opts["precision"]
    try:
        fit, tuning = _fit(method, dataset, estimand, solver_settings(opts), kernel_settings(opts), opts["threads"])
    except NumericalError as exc:
        if getattr(exc, "tune_result", None) is not None:
            exc.tune_result.write_csv(out / "tuning.csv", prec)
        raise
    write_weights_csv(out / "weights.csv", dataset, fit, prec)
    theta = {name: float(v) for name, v in zip(fit.column_names or
                                               [f"theta{j + 1}" for j in range(len(fit.theta))], fit.theta)}
    (out / "theta.json").write_text(json.dumps(theta, indent=2) + "\n", encoding="utf-8")
    report = balance_report(dataset, fit)
    diag = {
        "method": method,
        "estimand": estimand.value,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "final_score_norm": fit.final_score_norm,
        "solver_path": fit.method_used,
        "n": dataset.n,
        "n_columns": len(fit.theta),
        "max_global_sd": report.max_global,
        "mean_subgroup_sd": report.mean_subgroup,
    }
    if tuning is not None:
        diag["chosen_sigma"] = tuning.chosen_sigma
        tuning.write_csv(out / "tuning.csv", prec)
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2, default=_json_default) + "\n",
                                          encoding="utf-8")
    return EXIT_OK


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x).__name__)


def cmd_diagnose(args, opts) -> int:
    estimand = _estimand(opts)
    dataset = load_dataset(args.data, opts)
    w1, w0 = read_weights_csv(args.weights, dataset, estimand)
    Zd, names = diagnostic_matrix(dataset, parse_transforms(opts["transforms"]))
    report = balance_report(dataset, weights=(w1, w0), diag_covariates=Zd, diag_names=names)
    write_balance_csv(args.out, report.rows(opts["method"]), opts["precision"])
    return EXIT_OK


def cmd_estimate(args, opts) -> int:
    estimand = _estimand(opts)
    dataset = load_dataset(args.data, opts, need_outcome=True)
    w1, w0 = read_weights_csv(args.weights, dataset, estimand)
    labels = ["overall", *dataset.subgroup_names]
    rows = [(label, est, estimand.value) for label, est in zip(labels, all_effects(dataset, weights=(w1, w0)))]
    # weights-only estimates carry no estimand of their own; label them with the configured one
    write_effects_csv(args.out, rows, opts["method"], opts["precision"])
    return EXIT_OK


def cmd_simulate(args, opts) -> int:
    if opts["reps"] < 1:
        raise UsageError("reps must be >= 1")
    if opts["ps"] not in PS_MODELS:
        raise UsageError(f"ps must be one of {PS_MODELS}")
    oms = opts["om"] or ["OM1"]
    for om in oms:
        if om not in OUTCOME_MODELS:
            raise UsageError(f"om must be a subset of {OUTCOME_MODELS}")
    for m in opts["methods"]:
        if m not in METHODS:
            raise UsageError(f"methods must be a subset of {METHODS}")
    try:
        npg = tuple(int(x) for x in opts["n_per_group"])
    except ValueError:
        raise UsageError("n_per_group must be integers") from None
    scenario = Scenario(opts["ps"], oms[0], _estimand(opts).value, K=opts["K"], n_per_group=npg,
                        seed=opts["seed"])
    result = run_monte_carlo(scenario, opts["methods"], opts["reps"], outcome_models=oms,
                             settings=solver_settings(opts), kernel=kernel_settings(opts),
                             n_jobs=opts["threads"])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.write_table_csv(out / "table.csv", opts["precision"])
    result.write_sd_csv(out / "sd.csv", opts["precision"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [data] [fit] [solver] [kernel] [simulate] [output]")
    common.add_argument("--precision", choices=("6", "full"), default=None,
                        help="significant digits in output files (default 6)")
    common.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")
    common.add_argument("--estimand", default=None, help="ATE or ATT")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("data", help="input CSV")
    data.add_argument("--treatment", default=None)
    data.add_argument("--covariates", default=None, help="comma-separated column names")
    data.add_argument("--subgroups", default=None, help="comma-separated 0/1 indicator columns")
    data.add_argument("--outcome", default=None)
    data.add_argument("--id", default=None)
    data.add_argument("--method", default=None, help=f"one of {', '.join(METHODS)}")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--tol-score", dest="tol_score", type=float, default=None)
    solver.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    solver.add_argument("--solver", default=None, help="newton, gmm or newton_then_gmm")
    solver.add_argument("--variance-threshold", dest="variance_threshold", type=float, default=None)
    solver.add_argument("--grid-distance", dest="grid_distance", default=None)

    parser = argparse.ArgumentParser(prog="gsbps", description="Subgroup-balancing propensity score weighting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common, data, solver], help="fit a propensity model and write weights")
    p.add_argument("--out-dir", default=".", help="directory for weights.csv, theta.json, diagnostics.json")

    p = sub.add_parser("diagnose", parents=[common, data], help="S/D balance table for given weights")
    p.add_argument("weights", help="weights CSV written by fit")
    p.add_argument("--transforms", default=None, help='extra product terms, e.g. "X1*X1, X1*X4"')
    p.add_argument("--out", default="balance.csv")

    p = sub.add_parser("estimate", parents=[common, data], help="Hajek IPW effects for given weights")
    p.add_argument("weights", help="weights CSV written by fit")
    p.add_argument("--out", default="effects.csv")

    p = sub.add_parser("simulate", parents=[common, solver], help="Monte Carlo study")
    p.add_argument("--ps", default=None, help="PS1 or PS2")
    p.add_argument("--om", default=None, help="comma-separated outcome models scored on the same fits")
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--n-per-group", dest="n_per_group", default=None, help="one size or one per subgroup")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--methods", default=None, help=f"comma-separated subset of {', '.join(METHODS)}")
    p.add_argument("--out-dir", default=".")
    return parser


COMMANDS = {"fit": cmd_fit, "diagnose": cmd_diagnose, "estimate": cmd_estimate, "simulate": cmd_simulate}


def _error(kind, code, message, stream=None):
    payload = {"error": {"type": kind, "exit_code": code, "message": message}}
    print(json.dumps(payload), file=stream or sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args, args.config)
        return COMMANDS[args.command](args, opts)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _error("UsageError", EXIT_USAGE, str(exc))
    except DataError as exc:
        return _error(type(exc).__name__, EXIT_DATA, str(exc))
    except NumericalError as exc:
        return _error(type(exc).__name__, EXIT_NUMERIC, str(exc))
    except GSBPSError as exc:
        return _error(type(exc).__name__, EXIT_NUMERIC, str(exc))


if __name__ == "__main__":
    sys.exit(main())
