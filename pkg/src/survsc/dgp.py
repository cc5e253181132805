"""Survival-time generators and closed-form bias oracles.

Two outcome models are supported:

* ``log_linear``: log T = x.beta + eps  (accelerated failure time)
* ``linear``:     T = intercept + x.beta + eps, truncated at 0

with eps ~ N(0, sigma^2) or no noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Cohort, WeightVector

SCENARIOS = ("fig1_nonlinear", "fig1_linear_region", "fig2", "fig3_linear")


@dataclass(frozen=True)
class AftSpec:
    beta: tuple = (1.0,)
    sigma: float = 0.0
    scale: str = "log_linear"
    intercept: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in np.atleast_1d(self.beta)))
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.scale not in ("log_linear", "linear"):
            raise ValueError(f"unknown scale {self.scale!r}")

    @property
    def d(self) -> int:
        return len(self.beta)

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        X = X.reshape(-1, self.d) if X.ndim < 2 else X
        if X.shape[1] != self.d:
            raise ValueError(f"covariates have d={X.shape[1]}, spec has d={self.d}")
        return self.intercept + X @ np.asarray(self.beta)


@dataclass(frozen=True)
class BiasReport:
    extrapolation: float
    interpolation: float
    total: float


@dataclass(frozen=True)
class SimulationResult:
    times: np.ndarray
    truncated: int = 0


def simulate(spec: AftSpec, covariates, seed: int, return_truncated: bool = False):
    """Draw one untreated survival time per covariate row.

    Noise comes from ``numpy.random.default_rng(seed)``; with ``sigma == 0`` the
    output does not depend on the seed. Linear-model draws below zero are set
    to zero; pass ``return_truncated=True`` to get the count as well.
    """
    lp = spec.linear_predictor(covariates)
    eps = np.random.default_rng(seed).standard_normal(lp.size) * spec.sigma if spec.sigma > 0 else 0.0
    if spec.scale == "log_linear":
        times, truncated = np.exp(lp + eps), 0
    else:
        raw = lp + eps
        truncated = int(np.sum(raw < 0))
        times = np.maximum(raw, 0.0)
    return SimulationResult(times, truncated) if return_truncated else times


def mu0(spec: AftSpec, x) -> float | np.ndarray:
    """E[T(0) | X = x] (ignoring truncation for the linear model)."""
    lp = spec.linear_predictor(x)
    out = np.exp(lp + 0.5 * spec.sigma**2) if spec.scale == "log_linear" else lp
    return float(out[0]) if out.size == 1 and np.ndim(x) <= 1 else out


def bias_decomposition(spec: AftSpec, target, donors, weights: WeightVector) -> BiasReport:
    """Split mu0(x*) - sum_j w_j mu0(x_j) into extrapolation and interpolation parts.

    ``total`` is computed directly, not as the sum of the parts. For the
    log-linear model the interpolation term is evaluated in the Jensen form
    -exp(eta_bar + sigma^2/2) * sum_j w_j (exp(d_j) - 1 - d_j), d_j = eta_j - eta_bar,
    which keeps it non-positive under rounding. It is zero for the linear model.
    """
    D = np.asarray(donors, dtype=float).reshape(len(weights), spec.d)
    w = weights.weights
    mu_star = mu0(spec, np.asarray(target, dtype=float).reshape(spec.d))
    mu_blend = mu0(spec, w @ D)
    total = mu_star - float(w @ np.atleast_1d(mu0(spec, D)))
    if spec.scale == "linear":
        interp = 0.0
    else:
        eta = spec.linear_predictor(D)
        eta_bar = float(w @ eta)
        dev = eta - eta_bar
        gap = np.maximum(np.expm1(dev) - dev, 0.0)
        interp = -math.exp(eta_bar + 0.5 * spec.sigma**2) * float(w @ gap)
    return BiasReport(extrapolation=mu_star - mu_blend, interpolation=interp, total=total)


def lognormal_bias_oracle(sigma: float, mu_star: float, donor_mus, weights: WeightVector, match_index=None):
    """Closed-form E[T*] - E[estimate] for SC, log-SC and NN matching.

    ``donor_mus`` are the donors' log-time means. The match defaults to the
    donor with the closest mean (lowest index on ties).
    Returns (bias_sc, bias_logsc, bias_match).
    """
    mus = np.asarray(donor_mus, dtype=float).reshape(-1)
    if mus.size != len(weights):
        raise ValueError("donor_mus and weights differ in length")
    w = weights.weights
    half_var = 0.5 * sigma * sigma
    if match_index is None:
        match_index = int(np.argmin(np.abs(mus - mu_star)))
    bias_logsc = (math.exp(half_var) - math.exp(half_var * weights.l2_sq)) * math.exp(mu_star)
    bias_sc = math.exp(half_var) * (math.exp(mu_star) - float(w @ np.exp(mus)))
    bias_match = math.exp(half_var) * (math.exp(mu_star) - math.exp(mus[match_index]))
    return bias_sc, bias_logsc, bias_match


def debiased_oracle_bias(sigma: float, mu_star: float, donor_mus, weights: WeightVector) -> float:
    """E[T*] - E[debiased log-SC]; zero for a perfect match on the log scale."""
    mus = np.asarray(donor_mus, dtype=float).reshape(-1)
    return math.exp(0.5 * sigma * sigma) * (math.exp(mu_star) - math.exp(float(weights.weights @ mus)))


@dataclass(frozen=True)
class Scenario:
    name: str
    target: np.ndarray
    donors: np.ndarray
    spec: AftSpec
    note: str = ""


def stylized_scenario(name: str, sigma: float | None = None) -> Scenario:
    """Canonical one-covariate instances (target x* = 2, donors 1.5 and 3 unless noted).

    ``fig1_linear_region`` shifts the same geometry to x* = -2 where exp(x) is
    nearly flat; both fig1 instances are illustrative choices of points.
    """
    x_star = np.array([2.0])
    donors = np.array([[1.5], [3.0]])
    if name == "fig1_nonlinear":
        return Scenario(name, x_star, donors, AftSpec((1.0,), 0.0), "illustrative points on exp(x)")
    if name == "fig1_linear_region":
        return Scenario(name, x_star - 4.0, donors - 4.0, AftSpec((1.0,), 0.0), "illustrative points on exp(x)")
    if name == "fig2":
        s = 1.0 if sigma is None else float(sigma)
        return Scenario(name, x_star, donors, AftSpec((1.0,), s))
    if name == "fig3_linear":
        s = 2.0 if sigma is None else float(sigma)
        return Scenario(name, x_star, donors, AftSpec((1.0,), s, scale="linear", intercept=3.0))
    raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")


@dataclass(frozen=True)
class CohortDesign:
    """Covariate and outcome design for simulated cohorts.

    Covariates: ``n_continuous`` standard normals followed by ``n_binary``
    Bernoulli(0.5) flags and ``n_ordinal`` variables uniform on {1, 2, 3}.
    Event times follow ``spec``; censoring is administrative at
    ``admin_censoring`` plus an independent uniform(0, ``random_censoring_max``)
    time when that is set.
    """

    n_continuous: int = 2
    n_binary: int = 1
    n_ordinal: int = 1
    spec: AftSpec = field(default_factory=lambda: AftSpec((0.3, -0.2, 0.3, -0.2), 1.0, intercept=4.0))
    admin_censoring: float | None = 180.0
    random_censoring_max: float | None = 400.0

    @property
    def d(self) -> int:
        return self.n_continuous + self.n_binary + self.n_ordinal

    def feature_names(self) -> tuple:
        return (
            tuple(f"x{i}" for i in range(self.n_continuous))
            + tuple(f"b{i}" for i in range(self.n_binary))
            + tuple(f"o{i}" for i in range(self.n_ordinal))
        )


def make_cohort(n: int, design: CohortDesign, seed: int, treated: bool = False) -> tuple[Cohort, np.ndarray]:
    """Simulate an untreated cohort. Returns (cohort, latent event times)."""
    if design.spec.d != design.d:
        raise ValueError(f"spec has d={design.spec.d}, design has d={design.d}")
    rng = np.random.default_rng(seed)
    X = np.hstack(
        [
            rng.standard_normal((n, design.n_continuous)),
            rng.integers(0, 2, size=(n, design.n_binary)).astype(float),
            rng.integers(1, 4, size=(n, design.n_ordinal)).astype(float),
        ]
    )
    T = simulate(design.spec, X, int(rng.integers(2**32)))
    C = np.full(n, np.inf)
    if design.random_censoring_max is not None:
        C = rng.uniform(0.0, design.random_censoring_max, size=n)
    if design.admin_censoring is not None:
        C = np.minimum(C, design.admin_censoring)
    observed = np.minimum(T, C)
    event = T < C
    cohort = Cohort(
        ids=tuple(str(i) for i in range(n)),
        X=X,
        time=observed,
        event=event,
        treated=np.full(n, treated),
        feature_names=design.feature_names(),
    )
    return cohort, T
