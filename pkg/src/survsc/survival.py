"""Kaplan-Meier curves, KS distance, RMST error and a Breslow Cox model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Cohort, SurvivalCurve

DIVERGENCE_NORM = 50.0


def kaplan_meier(times, events) -> SurvivalCurve:
    """Product-limit estimate at every distinct observed time."""
    t = np.asarray(times, dtype=float).reshape(-1)
    e = np.asarray(events, dtype=bool).reshape(-1)
    if t.size == 0:
        raise ValueError("kaplan_meier needs at least one observation")
    if t.size != e.size:
        raise ValueError("times and events differ in length")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("times must be finite and non-negative")
    uniq, inv = np.unique(t, return_inverse=True)
    n_obs = np.bincount(inv, minlength=uniq.size)
    d = np.bincount(inv, weights=e.astype(float), minlength=uniq.size).astype(int)
    at_risk = t.size - np.concatenate([[0], np.cumsum(n_obs)[:-1]])
    surv = np.cumprod(1.0 - d / at_risk)
    return SurvivalCurve(uniq, surv, at_risk, d)


def ks_statistic(a: SurvivalCurve, b: SurvivalCurve, eval_times) -> float:
    """max over ``eval_times`` of |S_a(t) - S_b(t)|."""
    ts = np.asarray(eval_times, dtype=float).reshape(-1)
    if ts.size == 0:
        raise ValueError("eval_times is empty")
    return float(np.max(np.abs(a(ts) - b(ts))))


def rmst(time: float, event: bool, t_end: float = 120.0) -> tuple[float, bool]:
    """Restricted time min(T, t_end) and whether it is usable.

    A censored record is usable only if it was followed beyond ``t_end``.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    return min(float(time), t_end), bool(event) or float(time) > t_end


def mae_rmst(predicted, observed, t_end: float = 120.0) -> float:
    """Mean |RMST_pred - RMST_obs| over pairs where both sides are usable.

    ``predicted`` and ``observed`` are sequences of (time, event) pairs, or a
    (times, events) tuple of arrays.
    """
    pt, pe = _pairs(predicted)
    ot, oe = _pairs(observed)
    if pt.size != ot.size:
        raise ValueError("predicted and observed differ in length")
    usable = (pe | (pt > t_end)) & (oe | (ot > t_end))
    if not np.any(usable):
        raise ValueError("no usable pairs for RMST error (all censored before t_end)")
    diff = np.abs(np.minimum(pt, t_end) - np.minimum(ot, t_end))
    return float(np.mean(diff[usable]))


def _pairs(x) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(x, tuple) and len(x) == 2 and np.ndim(x[0]) == 1:
        return np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=bool)
    arr = list(x)
    if not arr:
        return np.zeros(0), np.zeros(0, dtype=bool)
    t, e = zip(*arr)
    return np.asarray(t, dtype=float), np.asarray(e, dtype=bool)


# --- Cox proportional hazards ----------------------------------------------


@dataclass(frozen=True, eq=False)
class CoxModel:
    beta: np.ndarray
    baseline_times: np.ndarray
    baseline_cumhaz: np.ndarray
    converged: bool
    iterations: int
    loglik: float = float("nan")

    def linear_predictor(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.beta

    def survival(self, x, t) -> np.ndarray:
        idx = np.searchsorted(self.baseline_times, np.asarray(t, dtype=float), side="right") - 1
        H = np.where(idx >= 0, self.baseline_cumhaz[np.maximum(idx, 0)], 0.0)
        return np.exp(-H * math.exp(float(np.asarray(x, dtype=float) @ self.beta)))


class _RiskSets:
    """Risk-set bookkeeping for the Breslow partial likelihood."""

    def __init__(self, X, time, event):
        order = np.argsort(-time, kind="stable")
        self.X = X[order]
        self.t = time[order]
        self.e = event[order]
        # position of the last subject (in descending-time order) still at risk at t_i
        self.last = np.searchsorted(-self.t, -self.t, side="right") - 1

    def evaluate(self, beta, hessian=True):
        X, e, last = self.X, self.e, self.last
        eta = X @ beta
        c = eta.max()
        r = np.exp(eta - c)
        S0 = np.cumsum(r)[last]
        S1 = np.cumsum(r[:, None] * X, axis=0)[last]
        mean = S1 / S0[:, None]
        ll = float(np.sum(eta[e] - np.log(S0[e]) - c))
        score = np.sum(X[e] - mean[e], axis=0)
        if not hessian:
            return ll, score, None
        S2 = np.cumsum(r[:, None, None] * X[:, :, None] * X[:, None, :], axis=0)[last]
        info = np.sum(S2[e] / S0[e, None, None] - mean[e, :, None] * mean[e, None, :], axis=0)
        return ll, score, info


def cox_loglik(X, time, event, beta) -> float:
    """Breslow log partial likelihood."""
    X = np.asarray(X, dtype=float).reshape(len(time), -1)
    return _RiskSets(X, np.asarray(time, float), np.asarray(event, bool)).evaluate(np.asarray(beta, float), False)[0]


def cox_score(X, time, event, beta) -> np.ndarray:
    X = np.asarray(X, dtype=float).reshape(len(time), -1)
    return _RiskSets(X, np.asarray(time, float), np.asarray(event, bool)).evaluate(np.asarray(beta, float), False)[1]


def breslow_cumhaz(X, time, event, beta) -> tuple[np.ndarray, np.ndarray]:
    eta = np.asarray(X, float) @ beta
    r = np.exp(eta)
    ev_times, deaths = np.unique(time[event], return_counts=True)
    # sum of exp(eta) over subjects with time >= s, for each event time s
    order = np.argsort(time, kind="stable")
    ts = time[order]
    tail = np.cumsum(r[order][::-1])[::-1]
    risk = tail[np.searchsorted(ts, ev_times, side="left")]
    return ev_times, np.cumsum(deaths / risk)


def fit_cox(cohort: Cohort, max_iter: int = 100, tol: float = 1e-8) -> CoxModel:
    """Newton-Raphson on the Breslow partial likelihood.

    Constant covariate columns are held at beta = 0. A coefficient norm above
    50, or a numerically singular information matrix at the stopping point,
    is taken as a monotone likelihood and flagged ``converged=False``.
    """
    return fit_cox_arrays(cohort.X, cohort.time, cohort.event, max_iter=max_iter, tol=tol)


def fit_cox_arrays(X, time, event, max_iter: int = 100, tol: float = 1e-8) -> CoxModel:
    X = np.asarray(X, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] < 1:
        raise ValueError("Cox model needs at least one covariate")
    if not event.any():
        raise ValueError("Cox model needs at least one event")
    varying = np.ptp(X, axis=0) > 0
    beta = np.zeros(X.shape[1])
    converged, it = True, 0
    if varying.any():
        Xv = X[:, varying]
        # centring leaves the partial likelihood unchanged and helps conditioning
        Xc = Xv - Xv.mean(axis=0)
        rs = _RiskSets(Xc, time, event)
        b = np.zeros(Xc.shape[1])
        ll, score, info = rs.evaluate(b)
        info_scale = np.trace(info) / info.shape[0]
        converged = False
        for it in range(1, max_iter + 1):
            if np.linalg.norm(b) > DIVERGENCE_NORM:
                break
            try:
                step = np.linalg.solve(info, score)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(info, score, rcond=None)[0]
            # a vanishing score alone is not enough: under separation it decays
            # while beta keeps drifting, so convergence is judged on the step
            if np.linalg.norm(step) <= tol * (1.0 + np.linalg.norm(b)):
                converged = True
                break
            for _ in range(40):
                b_new = b + step
                ll_new, score_new, info_new = rs.evaluate(b_new)
                if ll_new >= ll - 1e-12 * abs(ll):
                    break
                step = step / 2
            b, ll, score, info = b_new, ll_new, score_new, info_new
        # under separation the information collapses before |beta| gets large
        if converged and np.linalg.eigvalsh(info).min() <= 1e-10 * info_scale:
            converged = False
        beta[varying] = b
    bt, bh = breslow_cumhaz(X, time, event, beta)
    ll = cox_loglik(X, time, event, beta)
    return CoxModel(beta, bt, bh, converged, it, ll)


def predict_median_survival(model: CoxModel, x) -> float:
    """Smallest baseline time where S(t | x) <= 0.5; inf if never reached."""
    risk = math.exp(float(np.asarray(x, dtype=float) @ model.beta))
    s = np.exp(-model.baseline_cumhaz * risk)
    hit = np.flatnonzero(s <= 0.5)
    return float(model.baseline_times[hit[0]]) if hit.size else math.inf
