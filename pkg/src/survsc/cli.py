"""Command-line entry point: ``survsc <command> [--config run.json] [flags]``.

Commands
--------
sim-bias       Monte-Carlo vs closed-form bias on the stylized scenarios
resample-eval  biased-resampling evaluation over methods x delta_min x repeats
build-arm      constructed control arm for the treated rows of a cohort CSV
cv             control-only cross-validation of lambda_var
make-cohort    write a simulated log-normal AFT cohort CSV

Every command writes into ``--out-dir`` a set of CSV tables plus
``config.json`` holding the fully resolved run configuration. Files are
staged in a temporary directory and moved into place only on success.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .data import Cohort, CsvSchema, ROTTERDAM_SCHEMA, load_cohort_csv, normalize_pair, write_cohort_csv
from .dgp import SCENARIOS, AftSpec, CohortDesign, make_cohort
from .estimators import KINDS, EstimatorKind, build_control_group
from .experiment import (
    EvaluationError,
    Method,
    ResampleConfig,
    aggregate_reports,
    cross_validate_lambda,
    report_dicts,
    run_negative_control_eval,
    stylized_bias,
)
from .solver import SolverConfig, variance_factor
from .survival import kaplan_meier

SCHEMA_VERSION = 1
log = logging.getLogger("survsc")


class UsageError(Exception):
    pass


# --- config -----------------------------------------------------------------

DEFAULTS = {
    "sim-bias": {"scenario": None, "sigma": None, "draws": 100_000, "seed": None},
    "resample-eval": {
        "input": None,
        "schema": None,
        "methods": ["nn", "sc", "sc_log"],
        "sigma": None,
        "censoring": "weighted_indicator",
        "threshold": 0.5,
        "delta_grid": [0.0, 0.1],
        "repeats": 20,
        "seed": None,
        "t_end": 120.0,
        "target_pool_prob": 0.1,
        "selection_scale": 3.0,
        "init": "nearest_neighbor",
        "include_unadjusted": False,
        "risk_score": "median",
    },
    "build-arm": {
        "input": None,
        "schema": None,
        "method": "sc",
        "lambda_var": 0.0,
        "lambda_cov": 0.0,
        "sigma": None,
        "censoring": "weighted_indicator",
        "threshold": 0.5,
        "top_k": 5,
        "init": "nearest_neighbor",
        "seed": None,
    },
    "cv": {
        "input": None,
        "schema": None,
        "lambda_grid": [0.0, 0.01, 0.1, 1.0],
        "folds": 5,
        "metric": "mae",
        "method": "sc",
        "sigma": None,
        "censoring": "weighted_indicator",
        "threshold": 0.5,
        "seed": None,
        "t_end": 120.0,
    },
    "make-cohort": {
        "n": 2000,
        "seed": None,
        "beta": list(CohortDesign().spec.beta),
        "sigma": CohortDesign().spec.sigma,
        "intercept": CohortDesign().spec.intercept,
        "admin_censoring": CohortDesign().admin_censoring,
        "random_censoring_max": CohortDesign().random_censoring_max,
        "treated_fraction": 0.0,
    },
}
STOCHASTIC = {"sim-bias", "resample-eval", "cv", "make-cohort"}


def resolve_config(command: str, file_cfg: dict, overrides: dict) -> dict:
    if file_cfg.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise UsageError(f"unsupported schema_version {file_cfg.get('schema_version')!r}")
    if "command" in file_cfg and file_cfg["command"] != command:
        raise UsageError(f"config is for command {file_cfg['command']!r}, not {command!r}")
    cfg = dict(DEFAULTS[command])
    unknown = set(file_cfg) - set(cfg) - {"schema_version", "command"}
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg.update({k: v for k, v in file_cfg.items() if k in cfg})
    cfg.update({k: v for k, v in overrides.items() if v is not None and k in cfg})
    if command in STOCHASTIC and cfg.get("seed") is None:
        raise UsageError(f"{command} is stochastic: --seed (or 'seed' in the config) is required")
    if "input" in cfg and not cfg["input"]:
        raise UsageError(f"{command} needs --input")
    return {"schema_version": SCHEMA_VERSION, "command": command, **cfg}


def _schema(cfg: dict) -> CsvSchema:
    s = cfg.get("schema")
    if s is None:
        raise UsageError("a column schema is required ('schema' in the config, or --rotterdam)")
    if s == "rotterdam":
        return ROTTERDAM_SCHEMA
    try:
        return CsvSchema.from_mapping(s)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad schema: {exc}") from None


def parse_method(token: str, cfg: dict) -> Method:
    """``name`` or ``name:lambda_var``; names are nn, sc, sc_log, sc_log_debiased."""
    name, _, lam = token.partition(":")
    alias = {"nn": "nn_match", "sc": "sc_natural"}
    kind_name = alias.get(name, name)
    if kind_name not in KINDS:
        raise UsageError(f"unknown method {token!r}")
    try:
        kind = EstimatorKind(kind_name, cfg.get("sigma"), cfg.get("censoring", "weighted_indicator"), cfg.get("threshold", 0.5))
        solver = SolverConfig(
            lambda_var=float(lam) if lam else float(cfg.get("lambda_var", 0.0)),
            lambda_cov=float(cfg.get("lambda_cov", 0.0)),
            init=cfg.get("init", "nearest_neighbor"),
            seed=cfg.get("seed"),
        )
    except ValueError as exc:
        raise UsageError(f"method {token!r}: {exc}") from None
    return Method(token, kind, solver)


# --- output -----------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return v


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_dicts(path: Path, rows: list[dict]) -> None:
    header = list(rows[0]) if rows else []
    write_csv(path, header, ([r[k] for k in header] for r in rows))


def write_curve(path: Path, curve) -> None:
    write_csv(path, ["time", "survival", "at_risk", "events"], curve.to_rows())


class Staging:
    """Collect outputs in a temp dir; move them into ``out_dir`` on success."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir

    def __enter__(self) -> Path:
        self.out_dir.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".survsc-", dir=self.out_dir.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out_dir.mkdir(parents=True, exist_ok=True)
                for f in sorted(self.tmp.iterdir()):
                    os.replace(f, self.out_dir / f.name)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _dump_config(tmp: Path, cfg: dict) -> None:
    (tmp / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


# --- commands ---------------------------------------------------------------


def cmd_sim_bias(cfg: dict, out: Path) -> None:
    if cfg["scenario"] not in SCENARIOS:
        raise UsageError(f"unknown scenario {cfg['scenario']!r}; choose from {SCENARIOS}")
    if int(cfg["draws"]) < 2:
        raise UsageError("draws must be >= 2")
    sigmas = cfg["sigma"]
    if not isinstance(sigmas, list):
        sigmas = [sigmas]
    rows = []
    with Staging(out) as tmp:
        for i, s in enumerate(sigmas):
            res = stylized_bias(cfg["scenario"], int(cfg["draws"]), int(cfg["seed"]) + i, s)
            rows.extend(res.rows)
            for name, curve in res.curves.items():
                suffix = "" if len(sigmas) == 1 else f"_sigma{res.rows[0]['sigma']:g}"
                write_curve(tmp / f"km_{name}{suffix}.csv", curve)
        write_dicts(tmp / "bias.csv", rows)
        _dump_config(tmp, cfg)


def _untreated(cohort: Cohort) -> Cohort:
    return cohort.subset(~cohort.treated)


def cmd_resample_eval(cfg: dict, out: Path) -> None:
    cohort = _untreated(load_cohort_csv(cfg["input"], _schema(cfg)))
    methods = [parse_method(t, cfg) for t in cfg["methods"]]
    try:
        resample = ResampleConfig(
            float(cfg["target_pool_prob"]), float(cfg["selection_scale"]), 0.0, int(cfg["seed"]), cfg["risk_score"]
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    reports = run_negative_control_eval(
        cohort, methods, [float(d) for d in cfg["delta_grid"]], int(cfg["repeats"]), int(cfg["seed"]),
        resample=resample, t_end=float(cfg["t_end"]), include_unadjusted=bool(cfg["include_unadjusted"]),
    )
    with Staging(out) as tmp:
        write_dicts(tmp / "runs.csv", report_dicts(reports))
        write_dicts(tmp / "aggregate.csv", aggregate_reports(reports))
        _dump_config(tmp, cfg)


def cmd_build_arm(cfg: dict, out: Path) -> None:
    cohort = load_cohort_csv(cfg["input"], _schema(cfg))
    treated, controls = cohort.subset(cohort.treated), cohort.subset(~cohort.treated)
    if len(treated) == 0:
        raise EvaluationError("no treated subjects in the input")
    if len(controls) == 0:
        raise EvaluationError("no untreated subjects to draw donors from")
    controls, treated = normalize_pair(controls, treated)
    m = parse_method(cfg["method"], cfg)
    units = build_control_group(treated, controls, m.kind, m.solver)
    k = int(cfg["top_k"])
    header = ["target_id", "synthetic_time", "synthetic_event", "match_distance", "variance_factor", "n_support"]
    for i in range(k):
        header += [f"donor_{i + 1}", f"weight_{i + 1}"]
    rows = []
    for u in units:
        row = [u.target_id, u.time, u.event, u.match_distance, variance_factor(u.weights), u.weights.support.size]
        top = u.weights.top(k)
        for i in range(k):
            row += list(top[i]) if i < len(top) else ["", ""]
        rows.append(row)
    t = np.array([u.time for u in units])
    e = np.array([u.event for u in units])
    with Staging(out) as tmp:
        write_csv(tmp / "arm.csv", header, rows)
        write_curve(tmp / "km_treated.csv", kaplan_meier(treated.time, treated.event))
        write_curve(tmp / "km_controls.csv", kaplan_meier(controls.time, controls.event))
        write_curve(tmp / "km_constructed.csv", kaplan_meier(t, e))
        _dump_config(tmp, cfg)


def cmd_cv(cfg: dict, out: Path) -> None:
    cohort = _untreated(load_cohort_csv(cfg["input"], _schema(cfg)))
    m = parse_method(cfg["method"], cfg)
    if cfg["metric"] not in ("mae", "ks"):
        raise UsageError("metric must be 'mae' or 'ks'")
    try:
        best, table = cross_validate_lambda(
            cohort, cfg["lambda_grid"], int(cfg["folds"]), cfg["metric"], m.kind, int(cfg["seed"]),
            base=m.solver, t_end=float(cfg["t_end"]),
        )
    except ValueError as exc:
        raise EvaluationError(str(exc)) from exc
    with Staging(out) as tmp:
        write_dicts(tmp / "cv.csv", table)
        (tmp / "selection.json").write_text(
            json.dumps({"best_lambda_var": best, "metric": cfg["metric"]}, indent=2, sort_keys=True) + "\n"
        )
        _dump_config(tmp, cfg)


def cmd_make_cohort(cfg: dict, out: Path) -> None:
    beta = tuple(float(b) for b in cfg["beta"])
    try:
        design = CohortDesign(
            spec=AftSpec(beta, float(cfg["sigma"]), intercept=float(cfg["intercept"])),
            admin_censoring=cfg["admin_censoring"],
            random_censoring_max=cfg["random_censoring_max"],
        )
        cohort, _ = make_cohort(int(cfg["n"]), design, int(cfg["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    frac = float(cfg["treated_fraction"])
    if frac > 0:
        flags = np.random.default_rng(int(cfg["seed"]) + 1).random(len(cohort)) < frac
        cohort = Cohort(cohort.ids, cohort.X, cohort.time, cohort.event, flags, cohort.feature_names)
    schema = CsvSchema(covariates=cohort.feature_names, id="id")
    with Staging(out) as tmp:
        write_cohort_csv(cohort, tmp / "cohort.csv", schema)
        cfg_out = dict(cfg, csv_schema=schema.to_mapping())
        _dump_config(tmp, cfg_out)


COMMANDS = {
    "sim-bias": cmd_sim_bias,
    "resample-eval": cmd_resample_eval,
    "build-arm": cmd_build_arm,
    "cv": cmd_cv,
    "make-cohort": cmd_make_cohort,
}


# --- argument parsing ---------------------------------------------------------


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _strs(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="survsc", description="Synthetic controls and matching for survival outcomes.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_input=False):
        sp.add_argument("--config", type=Path, help="run-config JSON; flags override its values")
        sp.add_argument("--out-dir", type=Path, required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        if with_input:
            sp.add_argument("--input", type=str)
            sp.add_argument("--rotterdam", action="store_const", const="rotterdam", dest="schema",
                            help="use the Rotterdam column schema")

    sp = sub.add_parser("sim-bias", help="stylized Monte-Carlo bias study")
    common(sp)
    sp.add_argument("--scenario", help=f"one of {', '.join(SCENARIOS)}")
    sp.add_argument("--sigma", type=float, action="append", help="noise SD; repeat for several")
    sp.add_argument("--draws", type=int)

    sp = sub.add_parser("resample-eval", help="biased-resampling evaluation")
    common(sp, True)
    sp.add_argument("--methods", type=_strs, help="comma list, e.g. nn,sc,sc_log,sc:0.5")
    sp.add_argument("--delta-grid", type=_floats, dest="delta_grid")
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--censoring", choices=["weighted_indicator", "uncensored_donors_only"])
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--t-end", type=float, dest="t_end")
    sp.add_argument("--init", choices=["nearest_neighbor", "uniform", "random"])
    sp.add_argument("--include-unadjusted", action="store_const", const=True, dest="include_unadjusted",
                    help="also report the raw donor pool as an 'unadjusted' row")
    sp.add_argument("--risk-score", choices=["median", "linear_predictor"], dest="risk_score")

    sp = sub.add_parser("build-arm", help="construct a control arm for treated rows")
    common(sp, True)
    sp.add_argument("--method")
    sp.add_argument("--lambda-var", type=float, dest="lambda_var")
    sp.add_argument("--lambda-cov", type=float, dest="lambda_cov")
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--censoring", choices=["weighted_indicator", "uncensored_donors_only"])
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--top-k", type=int, dest="top_k")
    sp.add_argument("--init", choices=["nearest_neighbor", "uniform", "random"])

    sp = sub.add_parser("cv", help="cross-validate lambda_var on controls")
    common(sp, True)
    sp.add_argument("--lambda-grid", type=_floats, dest="lambda_grid")
    sp.add_argument("--folds", type=int)
    sp.add_argument("--metric", choices=["mae", "ks"])
    sp.add_argument("--method")
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--censoring", choices=["weighted_indicator", "uncensored_donors_only"])
    sp.add_argument("--t-end", type=float, dest="t_end")

    sp = sub.add_parser("make-cohort", help="simulate a cohort CSV")
    common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--treated-fraction", type=float, dest="treated_fraction")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_cfg = {}
        if args.config is not None:
            try:
                file_cfg = json.loads(args.config.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {args.config}: {exc}") from None
        overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out_dir", "verbose")}
        cfg = resolve_config(args.command, file_cfg, overrides)
        if cfg.get("input") and Path(cfg["input"]).resolve().parent == args.out_dir.resolve():
            raise UsageError("input file must not live inside --out-dir")
        COMMANDS[args.command](cfg, args.out_dir)
    except UsageError as exc:
        print(f"survsc {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (EvaluationError, ValueError, OSError) as exc:
        print(f"survsc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
