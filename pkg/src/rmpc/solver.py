"""Baseline N-step MPC solvers and the policy error metric.

``solve_shooting`` handles any model by single shooting over the control
sequence; ``lqr_exact`` is the closed-form answer for linear models with
quadratic cost and serves as the oracle for everything else.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from rmpc.objective import trajectory_cost

log = logging.getLogger(__name__)


@dataclass
class MpcSolution:
    controls: np.ndarray  # (N, m)
    cost: float
    iterations: int = 0
    converged: bool = True
    start: int = 0

    @property
    def first_control(self) -> np.ndarray:
        return self.controls[0]


@dataclass(frozen=True)
class ShootingConfig:
    max_iterations: int = 500
    tolerance: float = 1e-6
    starts: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.starts < 1 or self.tolerance <= 0:
            raise ValueError("shooting config needs positive counts and tolerance")


class SolverFailure(RuntimeError):
    """Every start of the shooting solver diverged."""


def shooting_cost_and_grad(model, utility, x0, refs, U):
    """Cost of control sequence ``U: (N, m)`` and its gradient (adjoint sweep)."""
    X, A, B = model.rollout_jac(x0, U)
    l = utility.evaluate(X, refs, U)
    cost = float(l.sum())
    if not np.isfinite(cost) or not np.isfinite(X).all():
        return np.inf, np.zeros_like(U)
    lx, lu = utility.partials(X, refs, U)
    N = U.shape[0]
    g = np.empty_like(U)
    adj = lx[N - 1]
    for i in range(N - 1, -1, -1):
        g[i] = lu[i] + adj @ B[i]
        if i:
            adj = lx[i - 1] + adj @ A[i]
    return cost, g


def _projected_grad_norm(U, g, lo, hi):
    pg = g.copy()
    pg[(U <= lo) & (g > 0)] = 0.0
    pg[(U >= hi) & (g < 0)] = 0.0
    return float(np.abs(pg).max())


def solve_shooting(x0, refs, model, utility, cfg: ShootingConfig = ShootingConfig(), warm_start=None):
    """Minimise the N-step cost over the control sequence by single shooting.

    Box constraints are handled by L-BFGS-B (projected quasi-Newton). Start 0
    is the zero sequence (projected into bounds), then the optional warm
    start, then uniform random sequences. The lowest cost wins; ties go to
    the lowest start index.
    """
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim == 1:
        refs = refs[:, None]
    N, m = refs.shape[0], model.m
    if N < 1:
        raise ValueError("horizon must be >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    lo = np.broadcast_to(model.u_min, (N, m))
    hi = np.broadcast_to(model.u_max, (N, m))
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b)
              for a, b in zip(lo.ravel(), hi.ravel())]
    rng = np.random.default_rng(cfg.seed)
    starts = [np.clip(np.zeros((N, m)), lo, hi)]
    if warm_start is not None:
        starts.append(np.clip(np.asarray(warm_start, dtype=np.float64).reshape(N, m), lo, hi))
    span_lo = np.where(np.isfinite(lo), lo, -1.0)
    span_hi = np.where(np.isfinite(hi), hi, 1.0)
    while len(starts) < cfg.starts:
        starts.append(rng.uniform(span_lo, span_hi))

    def fun(z):
        c, g = shooting_cost_and_grad(model, utility, x0, refs, z.reshape(N, m))
        return c, g.ravel()

    best = None
    for k, U0 in enumerate(starts):
        c0, _ = fun(U0.ravel())
        if not np.isfinite(c0):
            log.debug("shooting start %d diverged at the initial guess", k)
            continue
        res = minimize(fun, U0.ravel(), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": cfg.max_iterations, "gtol": cfg.tolerance * 1e-2,
                                "ftol": 1e-15, "maxcor": 20})
        U = np.clip(res.x.reshape(N, m), lo, hi)
        c, g = shooting_cost_and_grad(model, utility, x0, refs, U)
        if not np.isfinite(c):
            continue
        if c0 < c:  # never return something worse than the start
            U, c = U0, c0
            g = shooting_cost_and_grad(model, utility, x0, refs, U)[1]
        sol = MpcSolution(U, c, int(res.nit), _projected_grad_norm(U, g, lo, hi) < cfg.tolerance, k)
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise SolverFailure(f"all {len(starts)} shooting starts diverged")
    return best


def lqr_exact(x0, refs, model, utility):
    """Finite-horizon tracking LQR by backward Riccati recursion.

    The stage cost charges ``x_i`` with ``|C x_i - r_i|_W^2 + x_i'Qx_i`` and
    ``u_{i-1}`` with ``u'Ru``. Bounds are ignored.
    """
    A, B = model.A, model.B
    C, W, Q, R = utility.C, utility.W, utility.Q, utility.R
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim == 1:
        refs = refs[:, None]
    N = refs.shape[0]
    Ws = 0.5 * (W + W.T)
    M = C.T @ Ws @ C + 0.5 * (Q + Q.T)
    # cost-to-go at x_i: x'P x + 2 s'x + kappa, including stage i's state cost
    P = M.copy()
    s = -C.T @ Ws @ refs[N - 1]
    kappa = float(refs[N - 1] @ Ws @ refs[N - 1])
    gains = [None] * N
    for i in range(N - 1, -1, -1):
        H = R + B.T @ P @ B
        K = np.linalg.solve(H, B.T @ P @ A)
        k = np.linalg.solve(H, B.T @ s)
        gains[i] = (K, k)
        P_new = A.T @ P @ A - A.T @ P @ B @ K
        s_new = A.T @ s - A.T @ P @ B @ k
        kappa = kappa - float(s @ B @ k)
        if i > 0:
            P = P_new + M
            s = s_new - C.T @ Ws @ refs[i - 1]
            kappa += float(refs[i - 1] @ Ws @ refs[i - 1])
        else:
            P, s = P_new, s_new
    x = np.asarray(x0, dtype=np.float64)
    value = float(x @ P @ x + 2 * s @ x + kappa)
    U = np.empty((N, B.shape[1]))
    for i in range(N):
        K, k = gains[i]
        U[i] = -K @ x - k
        x = A @ x + B @ U[i]
    sol = MpcSolution(U, trajectory_cost(model, utility, x0, refs, U))
    sol.recursion_cost = value
    return sol


class DegenerateDenominator(ValueError):
    """All optimal first controls in the evaluation set coincide."""


def policy_error(policy, theta, oracle, x0s, refs, N, denominator=None):
    """Normalised first-control gap between the ``N``-cycle policy and ``oracle``.

    ``oracle(x0, refs_N) -> MpcSolution``. The default denominator is the
    range of optimal first controls over the evaluation set (per entry).
    Returns a dict with ``e`` (mean), ``per_sample``, ``u_star``, ``u_policy``,
    ``denominator``.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=np.float64))
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim == 2:
        refs = refs[..., None]
    if x0s.shape[0] < 1:
        raise ValueError("evaluation set is empty")
    u_star = np.stack([oracle(x0s[b], refs[b, :N]).first_control for b in range(x0s.shape[0])])
    u_pol, _ = policy.forward(theta, x0s, refs[:, :N])
    return normalised_error(u_star, u_pol, denominator)


def normalised_error(u_star, u_pol, denominator=None):
    if denominator is None:
        denominator = u_star.max(axis=0) - u_star.min(axis=0)
    denominator = np.asarray(denominator, dtype=np.float64)
    if np.any(denominator <= 1e-12):
        raise DegenerateDenominator(f"optimal control range is degenerate: {denominator}")
    per = (np.abs(u_star - u_pol) / denominator).mean(axis=1)
    return {"e": float(per.mean()), "per_sample": per, "u_star": u_star, "u_policy": u_pol,
            "denominator": denominator}
