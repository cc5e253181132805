"""Synthetic and matched control outcomes for survival times.

Estimator kinds:

* ``sc_natural``  -- weighted mean of donor times
* ``sc_log``      -- exp of the weighted mean of donor log-times
* ``sc_log_debiased`` -- ``sc_log`` times exp(sigma^2/2 * (1 - sum w^2)),
  exact for perfect matches under a log-normal AFT with known sigma
* ``nn_match``    -- the single nearest donor

Censoring is handled either by building from uncensored donors only, or by
weighting the observed (possibly censored) times and the event indicators and
declaring the synthetic unit an event when the weighted indicator reaches a
threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Cohort, Subject, SyntheticUnit, WeightVector
from .solver import SolverConfig, nearest_neighbor, residual_sq, solve_group_weights, solve_sc_weights

KINDS = ("sc_natural", "sc_log", "sc_log_debiased", "nn_match")
CENSORING = ("weighted_indicator", "uncensored_donors_only")


@dataclass(frozen=True)
class EstimatorKind:
    kind: str = "sc_natural"
    sigma: float | None = None
    censoring: str = "weighted_indicator"
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; choose from {KINDS}")
        if self.censoring not in CENSORING:
            raise ValueError(f"unknown censoring rule {self.censoring!r}; choose from {CENSORING}")
        if self.kind == "sc_log_debiased" and not (self.sigma is not None and self.sigma > 0):
            raise ValueError("sc_log_debiased requires sigma > 0")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")

    @property
    def scale(self) -> str:
        return "log" if self.kind in ("sc_log", "sc_log_debiased") else "natural"


def _check(weights: WeightVector, donor_times) -> np.ndarray:
    t = np.asarray(donor_times, dtype=float).reshape(-1)
    if t.size != len(weights):
        raise ValueError(f"{t.size} donor times for {len(weights)} weights")
    return t


def synthetic_outcome(weights: WeightVector, donor_times) -> float:
    """sum_j w_j T_j."""
    t = _check(weights, donor_times)
    return float(weights.weights @ t)


def log_sc_outcome(weights: WeightVector, donor_times) -> float:
    """exp(sum_j w_j log T_j); never exceeds ``synthetic_outcome``."""
    t = _check(weights, donor_times)
    if np.any(t <= 0):
        raise ValueError("log-scale synthetic control needs strictly positive donor times")
    if weights.support.size == 1 and weights.weights[weights.support[0]] == 1.0:
        # exp(log(t)) is not always bit-exact
        return float(t[weights.support[0]])
    return float(math.exp(weights.weights @ np.log(t)))


def debias_factor(weights: WeightVector, sigma: float) -> float:
    return math.exp(0.5 * sigma * sigma * (1.0 - weights.l2_sq))


def debiased_log_sc(weights: WeightVector, donor_times, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return log_sc_outcome(weights, donor_times) * debias_factor(weights, sigma)


def combine(weights: WeightVector, donor_times, kind: EstimatorKind) -> float:
    if kind.kind in ("sc_natural", "nn_match"):
        return synthetic_outcome(weights, donor_times)
    if kind.kind == "sc_log":
        return log_sc_outcome(weights, donor_times)
    return debiased_log_sc(weights, donor_times, kind.sigma)


def _eligible(donors: Cohort, kind: EstimatorKind) -> np.ndarray:
    idx = np.arange(len(donors))
    if kind.censoring == "uncensored_donors_only":
        idx = idx[donors.event]
    if idx.size == 0:
        raise ValueError(
            "no eligible donors"
            + (" with an observed event" if kind.censoring == "uncensored_donors_only" else "")
        )
    return idx


def _unit(target_id, x, pool: Cohort, w: WeightVector, kind: EstimatorKind) -> SyntheticUnit:
    time = combine(w, pool.time, kind)
    if kind.censoring == "uncensored_donors_only":
        event = True
    else:
        event = bool(w.weights @ pool.event.astype(float) >= kind.threshold)
    return SyntheticUnit(
        target_id=target_id,
        time=time,
        event=event,
        scale=kind.scale,
        weights=w,
        match_distance=residual_sq(x, pool.X, w),
    )


def _weights(x, pool: Cohort, kind: EstimatorKind, config: SolverConfig) -> WeightVector:
    if kind.kind == "nn_match":
        return nearest_neighbor(x, pool.X, pool.ids)
    return solve_sc_weights(x, pool.X, config, pool.ids)


def build_synthetic_unit(
    target: Subject, donors: Cohort, kind: EstimatorKind = EstimatorKind(), config: SolverConfig = SolverConfig()
) -> SyntheticUnit:
    if len(donors) == 0:
        raise ValueError("donor pool is empty")
    x = np.asarray(target.covariates, dtype=float)
    if x.size != donors.d:
        raise ValueError(f"target has {x.size} covariates, donors have {donors.d}")
    pool = donors.subset(_eligible(donors, kind))
    return _unit(target.id, x, pool, _weights(x, pool, kind, config), kind)


def build_control_group(
    targets: Cohort, donors: Cohort, kind: EstimatorKind = EstimatorKind(), config: SolverConfig = SolverConfig()
) -> list[SyntheticUnit]:
    """One synthetic unit per target, in target order."""
    if targets.feature_names != donors.feature_names:
        raise ValueError("targets and donors have different covariate schemas")
    if len(donors) == 0:
        raise ValueError("donor pool is empty")
    pool = donors.subset(_eligible(donors, kind))
    if kind.kind != "nn_match" and config.lambda_cov > 0:
        W = solve_group_weights(targets.X, pool.X, config, pool.ids)
        return [_unit(tid, x, pool, w, kind) for tid, x, w in zip(targets.ids, targets.X, W.rows)]
    return [_unit(tid, x, pool, _weights(x, pool, kind, config), kind) for tid, x in zip(targets.ids, targets.X)]


def units_to_arrays(units: list[SyntheticUnit]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.array([u.time for u in units], dtype=float),
        np.array([u.event for u in units], dtype=bool),
    )
