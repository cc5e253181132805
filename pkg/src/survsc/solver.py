"""Simplex-constrained donor weights.

Single-target objective::

    f(w) = ||x - D^T w||^2 - lambda_var ||w||^2 (+ c^T w)

minimised over the probability simplex by projected gradient descent with
momentum. The linear term ``c`` is only used by the group solver, where it
carries the cross-unit overlap penalty ``lambda_cov * sum_{l != k} w_l``.
With ``lambda_var > 0`` the objective is non-convex and the method is local;
the default nearest-neighbour start picks the basin.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import WeightVector

INIT_CHOICES = ("nearest_neighbor", "uniform", "random")
# donor pools larger than twice this are solved on a growing working set
WORKING_SET = 64
KKT_TOL = 1e-7
POLISH_EVERY = 50


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    lambda_var: float = 0.0
    lambda_cov: float = 0.0
    max_iters: int = 10_000
    tol: float = 1e-10
    init: str = "nearest_neighbor"
    seed: int | None = None
    max_sweeps: int = 100

    def __post_init__(self):
        if self.lambda_var < 0 or self.lambda_cov < 0:
            raise ValueError("penalties must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1 or self.max_sweeps < 1:
            raise ValueError("max_iters and max_sweeps must be positive")
        if self.init not in INIT_CHOICES:
            raise ValueError(f"init must be one of {INIT_CHOICES}, got {self.init!r}")
        if self.init == "random" and self.seed is None:
            raise ValueError("random init requires a seed")


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    rows: tuple
    donor_ids: tuple
    objective: float = float("nan")
    sweeps: int = 0

    def __len__(self) -> int:
        return len(self.rows)

    def as_array(self) -> np.ndarray:
        return np.vstack([r.weights for r in self.rows])


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def _as_problem(target, donors) -> tuple[np.ndarray, np.ndarray]:
    D = np.asarray(donors, dtype=float)
    if D.ndim == 1:
        D = D.reshape(-1, 1)
    x = np.asarray(target, dtype=float).reshape(-1)
    if D.shape[0] == 0:
        raise ValueError("donor pool is empty")
    if D.shape[1] != x.size:
        raise ValueError(f"dimension mismatch: target d={x.size}, donors d={D.shape[1]}")
    return x, D


def _nn_index(x: np.ndarray, D: np.ndarray) -> int:
    # argmin returns the first minimum, i.e. the lowest donor index on ties
    return int(np.argmin(np.sum((D - x) ** 2, axis=1)))


def nearest_neighbor(target, donors, donor_ids=()) -> WeightVector:
    """One-hot weight on the Euclidean-nearest donor (lowest index on ties)."""
    x, D = _as_problem(target, donors)
    return WeightVector.one_hot(D.shape[0], _nn_index(x, D), donor_ids)


def _initial_weights(x, D, config: SolverConfig) -> np.ndarray:
    m = D.shape[0]
    if config.init == "nearest_neighbor":
        w = np.zeros(m)
        w[_nn_index(x, D)] = 1.0
        return w
    if config.init == "uniform":
        return np.full(m, 1.0 / m)
    return np.random.default_rng(config.seed).dirichlet(np.ones(m))


def _face_direction(Dc, lam, g, S):
    """Step that minimises the objective over the affine hull of support S.

    Solves the KKT system [2H 1; 1^T 0] [p; -mu] = [-g_S; 0] with
    H = Dc_S Dc_S^T - lam I. If it has no solution (the objective is
    unbounded along a null direction of H on the face) the least-squares
    residual is that descent ray, and the step is returned with ``ray=True``.
    """
    k = S.size
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = 2.0 * (Dc[S] @ Dc[S].T - lam * np.eye(k))
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    rhs = np.concatenate([-g[S], [0.0]])
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=1e-12)
    res = rhs - A @ sol
    if np.linalg.norm(res) > 1e-9 * max(np.linalg.norm(rhs), 1e-300):
        return res[:k], True
    return sol[:k], False


def _active_set(Dc, lam, c, w, f, grad, max_steps):
    """Primal active-set refinement of a feasible ``w`` (exact for lam = 0).

    Each step moves toward the minimiser over the current face, stopping at
    the first weight that hits zero (which then leaves the support); once the
    face is optimal the most violating outside donor joins it.
    """
    w = w.copy()
    fw = f(w)
    for _ in range(max_steps):
        S = np.flatnonzero(w > 0)
        g = grad(w)
        d, ray = _face_direction(Dc, lam, g, S)
        if g[S] @ d < 0 and np.linalg.norm(d) > 1e-15:
            neg = d < 0
            ratios = w[S][neg] / -d[neg]
            step = ratios.min() if ratios.size else np.inf
            if not ray:
                step = min(step, 1.0)
            if not np.isfinite(step):
                break
            v = w.copy()
            v[S] += step * d
            if ratios.size and step == ratios.min():
                v[S[np.flatnonzero(neg)[np.argmin(ratios)]]] = 0.0
            v = np.maximum(v, 0.0)
            v /= v.sum()
            fv = f(v)
            if fv > fw:
                break
            w, fw = v, fv
            continue
        # face is optimal: bring in the most violating outside donor
        outside = np.flatnonzero(w == 0)
        if outside.size == 0:
            break
        mu = float(g[S] @ w[S])
        j = outside[np.argmin(g[outside])]
        if g[j] >= mu - KKT_TOL * max(1.0, abs(mu)):
            break
        # move a little mass onto j along the pairwise direction
        i = S[np.argmax(g[S])]
        v = w.copy()
        dv = np.zeros_like(w)
        dv[j], dv[i] = 1.0, -1.0
        curv = 2.0 * (np.sum((Dc[j] - Dc[i]) ** 2) - 2.0 * lam)
        slope = g[j] - g[i]
        t = w[i] if curv <= 0 else min(w[i], -slope / curv)
        v += t * dv
        v = np.maximum(v, 0.0)
        v /= v.sum()
        fv = f(v)
        if fv > fw:
            break
        w, fw = v, fv
    return w


def _minimize(Dc, lam, c, w0, L, max_iters, tol):
    """Monotone accelerated projected gradient from ``w0``.

    ``Dc`` holds donors centred at the target, so the residual is ``-Dc^T w``.
    Stops when the relative improvement falls to ``tol`` (confirmed by a plain
    projected step) or when the Frank-Wolfe gap max_j (g.w - g_j), which bounds
    f(w) - f* for convex problems, falls to ``tol`` times the objective scale.
    Returns (w, f(w), iterations, converged).
    """

    def f(w):
        r = Dc.T @ w
        val = r @ r - lam * (w @ w)
        return val + c @ w if c is not None else val

    def grad(w):
        g = 2.0 * (Dc @ (Dc.T @ w)) - 2.0 * lam * w
        return g + c if c is not None else g

    def certified(w, fw):
        g = grad(w)
        return g @ w - g.min() <= tol * max(abs(fw), f_scale)

    w = w0.copy()
    fw = f(w)
    f_scale = max(abs(fw), 1e-300)
    y, t = w.copy(), 1.0
    for it in range(1, max_iters + 1):
        z = project_simplex(y - grad(y) / L)
        fz = f(z)
        if fz <= fw:
            w_new, f_new = z, fz
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = z + ((t - 1.0) / t_new) * (z - w)
            t = t_new
        else:
            # momentum overshot: plain projected step from w, restart momentum
            w_new = project_simplex(w - grad(w) / L)
            f_new = f(w_new)
            if f_new > fw:
                w_new, f_new = w, fw
            y, t = w_new.copy(), 1.0
        gain = fw - f_new
        w, fw = w_new, f_new
        if it % POLISH_EVERY == 0:
            p = _active_set(Dc, lam, c, w, f, grad, 4 * Dc.shape[0])
            if f(p) <= fw:
                w, fw = p, f(p)
                y, t = w.copy(), 1.0
            if certified(w, fw):
                return w, fw, it, True
        if gain <= tol * max(abs(fw + gain), 1e-300):
            # confirm stagnation with a plain projected step before stopping
            v = project_simplex(w - grad(w) / L)
            fv = f(v)
            if fw - fv <= tol * max(abs(fw), 1e-300):
                if fv < fw:
                    w, fw = v, fv
                return w, fw, it, True
            w, fw = v, fv
            y, t = w.copy(), 1.0
    return w, fw, max_iters, certified(w, fw)


def _lipschitz(Dc: np.ndarray, lam: float) -> float:
    s = np.linalg.norm(Dc, 2) if Dc.size else 0.0
    L = 2.0 * (s * s + lam)
    return L if L > 0 else 1.0


def residual_sq(target, donors, weights) -> float:
    """||x - sum_j w_j X_j||^2."""
    x, D = _as_problem(target, donors)
    w = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    r = x - D.T @ w
    return float(r @ r)


def sc_objective(target, donors, weights, lambda_var: float = 0.0) -> float:
    w = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    return residual_sq(target, donors, w) - lambda_var * float(w @ w)


def _kkt_violators(Dc, lam, c, w, scale) -> np.ndarray:
    """Donors whose partial derivative undercuts the support's common value."""
    g = 2.0 * (Dc @ (Dc.T @ w)) - 2.0 * lam * w
    if c is not None:
        g = g + c
    mu = g[w > 0].max()
    return np.flatnonzero((g < mu - KKT_TOL * scale) & (w == 0)), g


def _solve_working_set(Dc, lam, c, w0, config):
    """Solve on a growing subset of donors until the full-pool KKT check passes.

    The start set is the ``WORKING_SET`` donors nearest the target plus the
    support of ``w0``; violating donors are added in order of their gradient.
    """
    m = Dc.shape[0]
    dist = np.sum(Dc * Dc, axis=1)
    active = np.zeros(m, dtype=bool)
    active[np.argsort(dist, kind="stable")[:WORKING_SET]] = True
    active[w0 > 0] = True
    w = w0.copy()
    scale = max(float(np.max(dist)), lam, 1.0)
    total, ok = 0, True
    while True:
        idx = np.flatnonzero(active)
        sub = Dc[idx]
        w_sub, _, iters, ok_sub = _minimize(
            sub, lam, None if c is None else c[idx], w[idx], _lipschitz(sub, lam),
            config.max_iters - total, config.tol,
        )
        total += iters
        ok = ok_sub
        w = np.zeros(m)
        w[idx] = w_sub
        viol, g = _kkt_violators(Dc, lam, c, w, scale)
        if viol.size == 0 or total >= config.max_iters:
            ok = ok and viol.size == 0
            break
        viol = viol[np.argsort(g[viol], kind="stable")[:WORKING_SET]]
        active[viol] = True
    r = Dc.T @ w
    fw = r @ r - lam * (w @ w) + (0.0 if c is None else c @ w)
    return w, fw, total, ok


def _solve(x, D, config, w0, c=None, donor_ids=()) -> WeightVector:
    m = D.shape[0]
    if m == 1:
        return WeightVector.one_hot(1, 0, donor_ids)
    Dc = D - x
    if m > 2 * WORKING_SET:
        w, fw, iters, ok = _solve_working_set(Dc, config.lambda_var, c, w0, config)
    else:
        L = _lipschitz(Dc, config.lambda_var)
        w, fw, iters, ok = _minimize(Dc, config.lambda_var, c, w0, L, config.max_iters, config.tol)
    if not ok:
        warnings.warn(
            f"weight solver stopped at max_iters={config.max_iters} without meeting tol={config.tol}",
            ConvergenceWarning,
            stacklevel=3,
        )
    w = w / w.sum()
    return WeightVector(w, donor_ids, converged=ok, iterations=iters, objective=float(fw))


def solve_sc_weights(target, donors, config: SolverConfig = SolverConfig(), donor_ids=()) -> WeightVector:
    """Synthetic-control weights, optionally variance-penalised (``lambda_var``).

    ``lambda_cov`` is ignored here; see ``solve_group_weights``.
    """
    x, D = _as_problem(target, donors)
    return _solve(x, D, config, _initial_weights(x, D, config), donor_ids=donor_ids)


def group_objective(targets, donors, W: np.ndarray, lambda_var: float, lambda_cov: float) -> float:
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    D = np.asarray(donors, dtype=float).reshape(-1, T.shape[1])
    R = T - W @ D
    row_sq = np.sum(W * W, axis=1)
    s = W.sum(axis=0)
    overlap = 0.5 * (s @ s - row_sq.sum())
    return float(np.sum(R * R) - lambda_var * row_sq.sum() + lambda_cov * overlap)


def solve_group_weights(targets, donors, config: SolverConfig = SolverConfig(), donor_ids=()) -> WeightMatrix:
    """Weights for every target jointly, penalising donor overlap between rows.

    Block-coordinate descent: each sweep re-solves one row at a time with the
    other rows fixed, starting from its current value, so the joint objective
    never increases. With ``lambda_cov == 0`` (or one target) rows are
    independent solves.
    """
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    D = np.asarray(donors, dtype=float)
    if D.ndim == 1:
        D = D.reshape(-1, 1)
    if T.shape[0] == 0:
        raise ValueError("no targets")
    if D.shape[0] == 0:
        raise ValueError("donor pool is empty")
    if T.shape[1] != D.shape[1]:
        raise ValueError(f"dimension mismatch: targets d={T.shape[1]}, donors d={D.shape[1]}")
    donor_ids = tuple(donor_ids) or tuple(range(D.shape[0]))

    if config.lambda_cov == 0 or T.shape[0] == 1:
        rows = tuple(_solve(x, D, config, _initial_weights(x, D, config), donor_ids=donor_ids) for x in T)
        W = np.vstack([r.weights for r in rows])
        return WeightMatrix(rows, donor_ids, group_objective(T, D, W, config.lambda_var, 0.0), 1)

    W = np.vstack([_initial_weights(x, D, config) for x in T])
    rows = [WeightVector(w, donor_ids) for w in W]
    J = group_objective(T, D, W, config.lambda_var, config.lambda_cov)
    sweeps = 0
    for sweeps in range(1, config.max_sweeps + 1):
        for k, x in enumerate(T):
            c = config.lambda_cov * (W.sum(axis=0) - W[k])
            rows[k] = _solve(x, D, config, W[k].copy(), c=c, donor_ids=donor_ids)
            W[k] = rows[k].weights
        J_new = group_objective(T, D, W, config.lambda_var, config.lambda_cov)
        gain = J - J_new
        J = J_new
        if gain <= config.tol * max(abs(J), 1e-300):
            break
    return WeightMatrix(tuple(rows), donor_ids, J, sweeps)


def variance_factor(w: WeightVector) -> float:
    """sum_j w_j^2: variance multiplier of a synthetic outcome vs a real one."""
    return w.l2_sq


def covariance_factor(wk: WeightVector, wl: WeightVector) -> float:
    """sum_j w_jk w_jl: covariance multiplier between two synthetic outcomes."""
    if wk.donor_ids != wl.donor_ids:
        raise ValueError("weight vectors refer to different donor pools")
    return float(wk.weights @ wl.weights)
