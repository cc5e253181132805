"""Evaluation protocols.

* ``biased_resample``: carve an enriched "target" sample out of an untreated
  cohort (Cox risk score -> expit selection) and optionally strip donors that
  lie close to any target, forcing imperfect matches.
* ``run_negative_control_eval``: for every (delta_min, repeat) rebuild each
  method's control group and score it against the target sample, which has
  no treatment effect by construction.
* ``cross_validate_lambda``: choose the variance penalty on controls only.
* ``stylized_bias``: Monte-Carlo bias of each estimator on the one-covariate
  scenarios, next to the closed-form values.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import Cohort, normalize_covariates, pairwise_distance_matrix
from .dgp import AftSpec, debiased_oracle_bias, lognormal_bias_oracle, mu0, simulate, stylized_scenario
from .estimators import EstimatorKind, build_control_group, debias_factor, units_to_arrays
from .solver import ConvergenceWarning, SolverConfig, nearest_neighbor, solve_sc_weights
from .survival import fit_cox, kaplan_meier, ks_statistic, mae_rmst, predict_median_survival

log = logging.getLogger(__name__)

T_END = 120.0
RISK_SCORES = ("median", "linear_predictor")


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ResampleConfig:
    target_pool_prob: float = 0.1
    selection_scale: float = 3.0
    delta_min: float = 0.0
    seed: int = 0
    risk_score: str = "median"

    def __post_init__(self):
        if self.risk_score not in RISK_SCORES:
            raise ValueError(f"risk_score must be one of {RISK_SCORES}")
        if not 0 < self.target_pool_prob < 1:
            raise ValueError("target_pool_prob must lie in (0, 1)")
        if self.delta_min < 0:
            raise ValueError("delta_min must be non-negative")


@dataclass(frozen=True)
class RiskScores:
    z: np.ndarray
    raw: np.ndarray
    n_infinite: int


def risk_scores(cohort: Cohort, kind: str = "median") -> RiskScores:
    """Z-scored Cox-based survival scores; larger means longer expected survival.

    ``median``: predicted median survival, with medians that are never
    reached replaced by (max observed time + 1) before standardising.
    ``linear_predictor``: minus the fitted x.beta.
    """
    if kind not in RISK_SCORES:
        raise ValueError(f"risk score must be one of {RISK_SCORES}")
    model = fit_cox(cohort)
    if not model.converged:
        log.warning("Cox fit did not converge (|beta| = %.3g)", float(np.linalg.norm(model.beta)))
    n_inf = 0
    if kind == "median":
        raw = np.array([predict_median_survival(model, x) for x in cohort.X])
        inf = ~np.isfinite(raw)
        raw[inf] = cohort.time.max() + 1.0
        n_inf = int(inf.sum())
    else:
        raw = -model.linear_predictor(cohort.X)
    sd = raw.std()
    z = (raw - raw.mean()) / sd if sd > 0 else np.zeros_like(raw)
    return RiskScores(z=z, raw=raw, n_infinite=n_inf)


@dataclass(frozen=True, eq=False)
class Resample:
    target: Cohort
    donors: Cohort
    n_target_pool: int
    n_removed: int


def _normalized(cohort: Cohort) -> Cohort:
    return cohort if cohort.normalization is not None else normalize_covariates(cohort)


def biased_resample(cohort: Cohort, config: ResampleConfig, scores: RiskScores | None = None) -> Resample:
    """Split an untreated cohort into an enriched target sample and a donor pool.

    Covariates are z-scored over the whole cohort first (unless already
    normalized). Pool assignment and selection use one generator seeded with
    ``config.seed``, so the split does not depend on ``delta_min``.
    """
    if np.any(cohort.treated):
        raise ValueError("biased_resample expects an untreated cohort")
    cohort = _normalized(cohort)
    scores = scores or risk_scores(cohort, config.risk_score)
    rng = np.random.default_rng(config.seed)
    n = len(cohort)
    in_pool = rng.random(n) < config.target_pool_prob
    selected = rng.random(n) < expit(config.selection_scale * scores.z)
    target_idx = np.flatnonzero(in_pool & selected)
    control_idx = np.flatnonzero(~in_pool)
    if target_idx.size == 0:
        raise EvaluationError(f"seed {config.seed}: empty target sample (target pool {in_pool.sum()})")
    keep = np.ones(control_idx.size, dtype=bool)
    if config.delta_min > 0:
        dist = pairwise_distance_matrix(cohort.X[control_idx], cohort.X[target_idx])
        keep = dist.min(axis=1) >= config.delta_min
    if not keep.any():
        raise EvaluationError(
            f"seed {config.seed}: no donors left after removing neighbours within delta_min={config.delta_min}"
        )
    return Resample(
        target=cohort.subset(target_idx),
        donors=cohort.subset(control_idx[keep]),
        n_target_pool=int(in_pool.sum()),
        n_removed=int((~keep).sum()),
    )


@dataclass(frozen=True)
class Method:
    name: str
    kind: EstimatorKind = EstimatorKind()
    solver: SolverConfig = SolverConfig()


def default_methods(lambda_var: float = 0.1, censoring: str = "weighted_indicator") -> list[Method]:
    return [
        Method("nn", EstimatorKind("nn_match", censoring=censoring)),
        Method("sc", EstimatorKind("sc_natural", censoring=censoring)),
        Method("sc_log", EstimatorKind("sc_log", censoring=censoring)),
        Method(f"sc_pen{lambda_var:g}", EstimatorKind("sc_natural", censoring=censoring), SolverConfig(lambda_var=lambda_var)),
    ]


@dataclass(frozen=True)
class RunReport:
    method: str
    delta_min: float
    repeat: int
    ks: float
    mae_rmst: float
    n_target: int
    n_donors: int
    seed: int

    def __post_init__(self):
        if not 0 <= self.ks <= 1:
            raise ValueError("ks must lie in [0, 1]")
        if self.n_target < 1 or self.n_donors < 1:
            raise ValueError("counts must be positive")


def group_metrics(target: Cohort, times, events, t_end: float = T_END, eval_times=None) -> tuple[float, float]:
    """(KS between KM curves, RMST MAE) of a constructed group against the target.

    KS is evaluated at the target's observed times unless ``eval_times`` is
    given. The MAE is NaN when no pair is usable or the group is unpaired.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    target_curve = kaplan_meier(target.time, target.event)
    grid = target.time if eval_times is None else eval_times
    ks = ks_statistic(target_curve, kaplan_meier(times, events), grid)
    mae = math.nan
    if times.size == len(target):
        try:
            mae = mae_rmst((times, events), (target.time, target.event), t_end)
        except ValueError:
            pass
    return ks, mae


def run_negative_control_eval(
    cohort: Cohort,
    methods: list[Method],
    delta_grid,
    repeats: int,
    seed: int,
    resample: ResampleConfig = ResampleConfig(),
    t_end: float = T_END,
    include_unadjusted: bool = True,
    eval_grid: str = "target",
) -> list[RunReport]:
    """Reports ordered by (repeat, delta_min, method).

    Repeat ``r`` resamples with seed ``seed + r``. ``eval_grid="uniform"``
    evaluates KS on 200 evenly spaced times up to ``t_end`` instead of the
    target's observed times.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    cohort = _normalized(cohort)
    scores = risk_scores(cohort, resample.risk_score)
    reports = []
    for r in range(repeats):
        run_seed = seed + r
        for delta in delta_grid:
            cfg = replace(resample, delta_min=float(delta), seed=run_seed)
            try:
                split = biased_resample(cohort, cfg, scores)
            except EvaluationError as exc:
                raise EvaluationError(f"repeat {r} (seed {run_seed}), delta_min {delta}: {exc}") from exc
            target, donors = split.target, split.donors
            grid = None if eval_grid == "target" else np.linspace(0.0, t_end, 200)
            rows = []
            if include_unadjusted:
                ks, _ = group_metrics(target, donors.time, donors.event, t_end, grid)
                rows.append(("unadjusted", ks, math.nan))
            for m in methods:
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", ConvergenceWarning)
                        units = build_control_group(target, donors, m.kind, m.solver)
                except ValueError as exc:
                    raise EvaluationError(
                        f"repeat {r} (seed {run_seed}), delta_min {delta}, method {m.name}: {exc}"
                    ) from exc
                t, e = units_to_arrays(units)
                ks, mae = group_metrics(target, t, e, t_end, grid)
                rows.append((m.name, ks, mae))
            for name, ks, mae in rows:
                reports.append(RunReport(name, float(delta), r, ks, mae, len(target), len(donors), run_seed))
            log.info("repeat %d delta %.3g: %d targets, %d donors", r, delta, len(target), len(donors))
    return reports


def aggregate_reports(reports: list[RunReport]) -> list[dict]:
    """Mean and 2 standard errors of KS and MAE per (delta_min, method)."""
    keys = []
    groups: dict = {}
    for rep in reports:
        k = (rep.delta_min, rep.method)
        if k not in groups:
            keys.append(k)
            groups[k] = []
        groups[k].append(rep)
    out = []
    for delta, method in sorted(keys, key=lambda k: (k[0], keys.index(k))):
        g = groups[(delta, method)]
        row = {"method": method, "delta_min": delta, "n_runs": len(g)}
        for metric in ("ks", "mae_rmst"):
            vals = np.array([getattr(x, metric) for x in g], dtype=float)
            vals = vals[np.isfinite(vals)]
            row[f"{metric}_mean"] = float(vals.mean()) if vals.size else math.nan
            row[f"{metric}_2se"] = float(2 * vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
        out.append(row)
    return out


# --- cross-validation -------------------------------------------------------


def cross_validate_lambda(
    donors: Cohort,
    lambda_grid,
    folds: int = 5,
    metric: str = "mae",
    kind: EstimatorKind = EstimatorKind(),
    seed: int = 0,
    base: SolverConfig = SolverConfig(),
    t_end: float = T_END,
) -> tuple[float, list[dict]]:
    """Pick ``lambda_var`` by treating held-out controls as pseudo-targets.

    Folds come from a seeded permutation split into contiguous blocks. The
    smallest lambda wins ties.
    """
    if metric not in ("mae", "ks"):
        raise ValueError("metric must be 'mae' or 'ks'")
    grid = [float(x) for x in lambda_grid]
    if not grid:
        raise ValueError("lambda_grid is empty")
    n = len(donors)
    if folds < 2 or n < 2 * folds:
        raise ValueError(f"cannot split {n} controls into {folds} folds")
    donors = _normalized(donors)
    perm = np.random.default_rng(seed).permutation(n)
    blocks = np.array_split(perm, folds)
    table = []
    for lam in grid:
        cfg = replace(base, lambda_var=lam)
        vals = []
        for k, held in enumerate(blocks):
            rest = np.setdiff1d(perm, held, assume_unique=True)
            target, pool = donors.subset(np.sort(held)), donors.subset(np.sort(rest))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                units = build_control_group(target, pool, kind, cfg)
            t, e = units_to_arrays(units)
            ks, mae = group_metrics(target, t, e, t_end)
            vals.append(ks if metric == "ks" else mae)
        vals = np.array(vals)
        if not np.any(np.isfinite(vals)):
            raise ValueError(f"lambda {lam}: no fold produced a usable {metric}")
        table.append({"lambda_var": lam, "metric": metric, "value": float(np.nanmean(vals)), "folds": folds})
    best = min(table, key=lambda row: (row["value"], row["lambda_var"]))
    return best["lambda_var"], table


# --- stylized Monte-Carlo ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class StylizedResult:
    rows: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    truncated: int = 0


def stylized_bias(scenario: str, n_draws: int, seed: int, sigma: float | None = None) -> StylizedResult:
    """Monte-Carlo bias E[T*] - mean(estimate) per estimator, with oracle values.

    Each draw uses fresh noise for every donor, so the n_draws synthetic units
    are mutually independent. Weights are fixed across draws (they depend on
    covariates only).
    """
    sc = stylized_scenario(scenario, sigma)
    spec: AftSpec = sc.spec
    m = sc.donors.shape[0]
    w_sc = solve_sc_weights(sc.target, sc.donors)
    w_nn = nearest_neighbor(sc.target, sc.donors)
    rng = np.random.default_rng(seed)
    s_truth, s_donor = (int(v) for v in rng.integers(0, 2**63 - 1, size=2))
    truth_sim = simulate(spec, np.repeat(sc.target[None, :], n_draws, axis=0), s_truth, return_truncated=True)
    donor_sim = simulate(spec, np.tile(sc.donors, (n_draws, 1)), s_donor, return_truncated=True)
    T = donor_sim.times.reshape(n_draws, m)
    truth_mean = float(np.atleast_1d(mu0(spec, sc.target))[0])

    est = {"sc": T @ w_sc.weights, "nn_match": T @ w_nn.weights}
    oracle = {}
    if spec.scale == "log_linear":
        logT = np.log(T)
        est["log_sc"] = np.exp(logT @ w_sc.weights)
        est["log_sc_debiased"] = est["log_sc"] * debias_factor(w_sc, spec.sigma)
        mus = spec.linear_predictor(sc.donors)
        mu_star = float(spec.linear_predictor(sc.target)[0])
        b_sc, b_log, _ = lognormal_bias_oracle(spec.sigma, mu_star, mus, w_sc)
        b_nn = lognormal_bias_oracle(spec.sigma, mu_star, mus, w_nn)[0]
        oracle = {
            "sc": b_sc,
            "nn_match": b_nn,
            "log_sc": b_log,
            "log_sc_debiased": debiased_oracle_bias(spec.sigma, mu_star, mus, w_sc),
        }
    else:
        mu_d = np.atleast_1d(mu0(spec, sc.donors))
        oracle = {"sc": truth_mean - float(w_sc.weights @ mu_d), "nn_match": truth_mean - float(w_nn.weights @ mu_d)}

    rows = []
    for name, vals in est.items():
        se = float(vals.std(ddof=1) / math.sqrt(n_draws)) if n_draws > 1 else 0.0
        rows.append(
            {
                "estimator": name,
                "sigma": spec.sigma,
                "mc_mean": float(vals.mean()),
                "truth": truth_mean,
                "mc_bias": truth_mean - float(vals.mean()),
                "oracle_bias": oracle[name],
                "mc_se": se,
                "n_draws": n_draws,
            }
        )
    curves = {}
    if scenario == "fig3_linear":
        all_events = np.ones(n_draws, dtype=bool)
        curves = {
            "true": kaplan_meier(truth_sim.times, all_events),
            "sc": kaplan_meier(est["sc"], all_events),
            "nn": kaplan_meier(est["nn_match"], all_events),
        }
    samples = {"true": truth_sim.times, **est}
    return StylizedResult(rows, curves, samples, truth_sim.truncated + donor_sim.truncated)


def report_dicts(reports: list[RunReport]) -> list[dict]:
    return [asdict(r) for r in reports]
