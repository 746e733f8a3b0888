"""Multi-horizon training objective and its exact gradient.

A rollout of length N applies, at step i, the policy run for ``N - i + 1``
cycles from the current state on the remaining reference window, steps the
model, and charges ``l(x_i, r_i, u_{i-1})``. Summed, this is the finite
horizon MPC cost written in terms of the policy parameters.

Gradients propagate through the dynamics using the Jacobians recorded on the
tape. Two routes are provided:

``"forward"``
    the sensitivity recursion ``phi_i = A_i phi_{i-1} + B_i psi_i`` with
    ``psi_i = dpi/dx phi_{i-1} + dpi/dtheta``, materialising dense
    sensitivities. Slow; used for checking.
``"reverse"``
    the equivalent adjoint sweep with vector-Jacobian products only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DIVERGENCE_LIMIT = 1e6


class RolloutDivergence(RuntimeError):
    """A rollout produced a non-finite or exploding state or cost."""

    def __init__(self, step, samples, values, message="rollout diverged"):
        self.step = step
        self.samples = list(samples)
        self.values = values
        super().__init__(f"{message} at step {step} (samples {self.samples[:5]}): {values}")


class QuadraticUtility:
    """``l = |C x - r|_W^2 + x'Qx + u'Ru`` evaluated on batches."""

    def __init__(self, C, W, Q, R):
        self.C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        self.W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        self.R = np.atleast_2d(np.asarray(R, dtype=np.float64))
        p, n = self.C.shape
        if self.W.shape != (p, p) or self.Q.shape != (n, n) or self.R.shape[0] != self.R.shape[1]:
            raise ValueError("inconsistent utility weight shapes")
        for name in ("W", "Q", "R"):
            M = getattr(self, name)
            if np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        self.n, self.p, self.m = n, p, self.R.shape[0]

    def evaluate(self, X, r, U):
        e = X @ self.C.T - r
        return (np.einsum("bi,ij,bj->b", e, self.W, e)
                + np.einsum("bi,ij,bj->b", X, self.Q, X)
                + np.einsum("bi,ij,bj->b", U, self.R, U))

    def partials(self, X, r, U):
        """``(dl/dx, dl/du)`` with shapes (B, n) and (B, m)."""
        e = X @ self.C.T - r
        Ws = self.W + self.W.T
        lx = (e @ Ws) @ self.C + X @ (self.Q + self.Q.T)
        lu = U @ (self.R + self.R.T)
        return lx, lu


def vehicle_utility(control_weight=10.0) -> QuadraticUtility:
    """Lateral tracking cost ``(y - r)^2 + 10 delta^2 + w_r^2``."""
    return QuadraticUtility(C=[[1.0, 0, 0, 0]], W=[[1.0]], Q=np.diag([0, 0, 0, 1.0]), R=[[control_weight]])


@dataclass
class StepRecord:
    x_prev: np.ndarray
    u: np.ndarray
    trace: object
    x: np.ndarray
    l: np.ndarray
    A: np.ndarray
    B: np.ndarray
    lx: np.ndarray
    lu: np.ndarray


@dataclass
class RolloutTape:
    x0: np.ndarray
    refs: np.ndarray
    steps: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> np.ndarray:
        return np.stack([self.x0] + [s.x for s in self.steps], axis=1)

    @property
    def controls(self) -> np.ndarray:
        return np.stack([s.u for s in self.steps], axis=1)


@dataclass
class ObjectiveValue:
    V: np.ndarray  # (B,)
    utilities: np.ndarray  # (B, N)


def _check_finite(step, X, l=None):
    bad = ~np.isfinite(X).all(axis=1) | (np.abs(X) > DIVERGENCE_LIMIT).any(axis=1)
    if l is not None:
        bad |= ~np.isfinite(l)
    if bad.any():
        idx = np.flatnonzero(bad)
        raise RolloutDivergence(step, idx, X[idx[:3]].tolist())


def rollout(policy, theta, model, utility, x0, refs):
    """Closed-loop rollout of the multi-horizon policy.

    ``x0``: (B, n); ``refs``: (B, N, p). Returns ``(ObjectiveValue, RolloutTape)``.
    """
    X = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim == 2:
        refs = refs[..., None]
    N = refs.shape[1]
    if N < 1:
        raise ValueError("horizon must be >= 1")
    tape = RolloutTape(x0=X, refs=refs)
    utils = np.empty((X.shape[0], N))
    for i in range(1, N + 1):
        u, trace = policy.forward(theta, X, refs[:, i - 1 :])
        Xn, A, B = model.step_jac_batch(X, u)
        r_i = refs[:, i - 1]
        l = utility.evaluate(Xn, r_i, u)
        _check_finite(i, Xn, l)
        lx, lu = utility.partials(Xn, r_i, u)
        tape.steps.append(StepRecord(X, u, trace, Xn, l, A, B, lx, lu))
        utils[:, i - 1] = l
        X = Xn
    return ObjectiveValue(V=utils.sum(axis=1), utilities=utils), tape


def gradient(policy, theta, tape: RolloutTape, mode="reverse"):
    """``sum_b dV_b/dtheta`` over the batch stored on ``tape``."""
    if mode == "reverse":
        return _gradient_reverse(policy, theta, tape)
    if mode == "forward":
        return sum(_gradient_forward(policy, theta, tape, b) for b in range(tape.x0.shape[0]))
    raise ValueError(f"unknown gradient mode {mode!r}")


def _gradient_reverse(policy, theta, tape):
    grad = np.zeros_like(theta)
    adj = np.zeros_like(tape.x0)  # dV/dx_i from terms after step i
    for rec in reversed(tape.steps):
        a_i = adj + rec.lx
        g_u = rec.lu + np.einsum("bn,bnm->bm", a_i, rec.B)
        g_theta, g_x = policy.backward(theta, rec.trace, g_u)
        grad += g_theta
        adj = np.einsum("bn,bnk->bk", a_i, rec.A) + g_x
    return grad


def _policy_jacobians(policy, theta, trace, b, batch):
    """Dense ``dpi/dtheta (m, P)`` and ``dpi/dx0 (m, n)`` for sample ``b``."""
    m = policy.out_dim
    J_theta = np.empty((m, theta.size))
    J_x = np.empty((m, policy.state_dim))
    for j in range(m):
        up = np.zeros((batch, m))
        up[b, j] = 1.0
        gt, gx = policy.backward(theta, trace, up)
        J_theta[j] = gt
        J_x[j] = gx[b]
    return J_theta, J_x


def _gradient_forward(policy, theta, tape, b):
    """Literal sensitivity recursion for sample ``b``."""
    batch = tape.x0.shape[0]
    phi = np.zeros((tape.x0.shape[1], theta.size))  # dx_0/dtheta = 0
    grad = np.zeros_like(theta)
    for rec in tape.steps:
        J_theta, J_x = _policy_jacobians(policy, theta, rec.trace, b, batch)
        psi = J_x @ phi + J_theta
        phi = rec.A[b] @ phi + rec.B[b] @ psi
        grad += rec.lx[b] @ phi + rec.lu[b] @ psi
    return grad


def batch_objective_and_gradient(policy, theta, model, utility, x0, refs, mode="reverse"):
    """Mean cost over the batch and its gradient."""
    X = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if X.shape[0] < 1:
        raise ValueError("need at least one sample")
    value, tape = rollout(policy, theta, model, utility, X, refs)
    nb = X.shape[0]
    return float(value.V.mean()), gradient(policy, theta, tape, mode) / nb


def trajectory_cost(model, utility, x0, refs, controls):
    """Cost of an explicit control sequence, by direct simulation."""
    x = np.asarray(x0, dtype=np.float64)[None]
    refs = np.asarray(refs, dtype=np.float64).reshape(len(controls), -1)
    total = 0.0
    for i, u in enumerate(np.asarray(controls, dtype=np.float64).reshape(len(controls), -1)):
        x = model.step_batch(x, u[None])
        total += float(utility.evaluate(x, refs[i][None], u[None])[0])
    return total
