"""Discrete-time system models.

Every model maps a batch of states ``(B, n)`` and inputs ``(B, m)`` to next
states ``(B, n)``; single vectors are accepted and returned unbatched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from rmpc._backend import kernels as _kernels
from rmpc._kernels_py import fiala as _fiala

G_DEFAULT = 9.81


def _batched(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    return (x.reshape(1, dim) if single else x), single


class DynamicsModel:
    """Base class: subclasses provide ``n``, ``m`` and ``step_batch``.

    Jacobians default to central finite differences with step
    ``max(1e-6, 1e-6 * |entry|)``.
    """

    n: int
    m: int
    u_min: np.ndarray
    u_max: np.ndarray

    def step_batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step(self, x, u):
        X, single = _batched(x, self.n)
        U, _ = _batched(u, self.m)
        out = self.step_batch(X, U)
        return out[0] if single else out

    def step_jac_batch(self, X, U):
        """Return ``(X_next, A, B)`` with ``A: (B, n, n)`` and ``B: (B, n, m)``."""
        X = np.asarray(X, dtype=np.float64)
        U = np.asarray(U, dtype=np.float64)
        nb = X.shape[0]
        Z = np.concatenate([X, U], axis=1)
        h = np.maximum(1e-6, 1e-6 * np.abs(Z))
        nz = self.n + self.m
        J = np.empty((nb, self.n, nz))
        for j in range(nz):
            Zp = Z.copy()
            Zm = Z.copy()
            Zp[:, j] += h[:, j]
            Zm[:, j] -= h[:, j]
            fp = self.step_batch(Zp[:, : self.n], Zp[:, self.n :])
            fm = self.step_batch(Zm[:, : self.n], Zm[:, self.n :])
            J[:, :, j] = (fp - fm) / (2.0 * h[:, j : j + 1])
        return self.step_batch(X, U), J[:, :, : self.n], J[:, :, self.n :]

    def rollout_jac(self, x0, U):
        """Simulate controls ``U: (N, m)`` from ``x0: (n,)``; returns states
        ``(N, n)`` (x_1..x_N) and per-step Jacobians."""
        U = np.asarray(U, dtype=np.float64).reshape(-1, self.m)
        N = U.shape[0]
        X = np.empty((N, self.n))
        A = np.empty((N, self.n, self.n))
        B = np.empty((N, self.n, self.m))
        x = np.asarray(x0, dtype=np.float64).reshape(1, self.n)
        for i in range(N):
            xn, a, b = self.step_jac_batch(x, U[i : i + 1])
            X[i], A[i], B[i] = xn[0], a[0], b[0]
            x = xn
        return X, A, B

    def jacobians(self, x, u):
        X, single = _batched(x, self.n)
        U, _ = _batched(u, self.m)
        _, A, B = self.step_jac_batch(X, U)
        return (A[0], B[0]) if single else (A, B)

    def clip(self, U):
        return np.clip(U, self.u_min, self.u_max)


def jacobians(model: DynamicsModel, x, u):
    """``(df/dx, df/du)`` at ``(x, u)`` using the model's preferred route."""
    return model.jacobians(x, u)


@dataclass(frozen=True)
class VehicleParams:
    """Lateral bicycle-model parameters. Stiffnesses may be given signed."""

    k1: float = -88000.0
    k2: float = -94000.0
    m: float = 1500.0
    a: float = 1.14
    b: float = 1.40
    Iz: float = 2420.0
    mu: float = 1.0
    f: float = 20.0
    vx: float = 16.0
    g: float = G_DEFAULT

    def __post_init__(self):
        for name in ("m", "a", "b", "Iz", "mu", "f", "vx", "g"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"vehicle parameter {name} must be positive, got {v}")
        if self.k1 == 0 or self.k2 == 0:
            raise ValueError("cornering stiffness must be nonzero")

    @property
    def C_f(self) -> float:
        return abs(self.k1)

    @property
    def C_r(self) -> float:
        return abs(self.k2)

    def perturbed(self, factors: dict) -> "VehicleParams":
        """Copy with named parameters multiplied by the given factors."""
        return replace(self, **{k: getattr(self, k) * v for k, v in factors.items()})

    def packed(self) -> np.ndarray:
        Fzf, Fzr = tire_loads(self)
        return np.array(
            [self.C_f, self.C_r, self.m, self.a, self.b, self.Iz, self.mu, self.f, self.vx, Fzf, Fzr],
            dtype=np.float64,
        )


def tire_loads(p: VehicleParams) -> tuple[float, float]:
    """Static axle loads ``(F_zf, F_zr)`` in N."""
    W = p.m * p.g
    L = p.a + p.b
    return p.b * W / L, p.a * W / L


def slip_angles(x, delta, p: VehicleParams):
    """Front and rear slip angles for state ``[y, phi, v_y, w_r]``."""
    x = np.asarray(x, dtype=np.float64)
    vy, wr = x[..., 2], x[..., 3]
    af = np.arctan((vy + p.a * wr) / p.vx) - delta
    ar = np.arctan((vy - p.b * wr) / p.vx)
    return af, ar


def fiala_alpha_max(C: float, mu: float, Fz: float) -> float:
    return math.atan(3.0 * mu * Fz / C)


def fiala_force(alpha, C, mu, Fz):
    """Fiala lateral tire force.

    ``C`` is the stiffness magnitude. The force opposes the slip angle and
    saturates at ``mu * Fz`` once ``tan|alpha| >= 3 mu Fz / C``.
    """
    if C <= 0 or mu <= 0 or Fz <= 0:
        raise ValueError("fiala_force needs C, mu, Fz > 0")
    out = _fiala(np.asarray(alpha, dtype=np.float64), C, mu, Fz)
    return float(out) if np.ndim(out) == 0 else out


def _fiala_dalpha(alpha, C, mu, Fz):
    t = np.tan(alpha)
    mf = mu * Fz
    inside = np.abs(t) <= 3.0 * mf / C
    # d/dt of the cubic is -C (1 - C|t|/(3 mu Fz))^2
    dF_dt = -C * (1.0 - C * np.abs(t) / (3.0 * mf)) ** 2
    return np.where(inside, dF_dt * (1.0 + t * t), 0.0)


class Vehicle(DynamicsModel):
    """Forward-Euler lateral bicycle model with Fiala tires.

    State ``[y, phi, v_y, w_r]``, input ``[delta]``. Longitudinal speed is
    the constant ``params.vx``.
    """

    n = 4
    m = 1

    def __init__(self, params: VehicleParams | None = None, u_max: float = 0.2, jacobian: str = "fd"):
        if jacobian not in ("fd", "analytic"):
            raise ValueError(f"unknown jacobian mode {jacobian!r}")
        self.params = params or VehicleParams()
        self.u_min = np.array([-u_max])
        self.u_max = np.array([u_max])
        self.jacobian_mode = jacobian
        self._packed = self.params.packed()

    def step_batch(self, X, U):
        return _kernels.vehicle_step(self._packed, X, U)

    def step_jac_batch(self, X, U):
        if self.jacobian_mode == "analytic":
            A, B = self.analytic_jacobians(X, U)
            return self.step_batch(X, U), A, B
        return _kernels.vehicle_step_jac(self._packed, X, U)

    def rollout_jac(self, x0, U):
        if self.jacobian_mode == "analytic":
            return super().rollout_jac(x0, U)
        return _kernels.vehicle_rollout_jac(self._packed, x0, U)

    def analytic_jacobians(self, X, U):
        """Closed-form Jacobians of the Euler update (batched)."""
        p = self.params
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        phi, vy, wr, d = X[:, 1], X[:, 2], X[:, 3], U[:, 0]
        Fzf, Fzr = tire_loads(p)
        af, ar = slip_angles(X, d, p)
        Ff = fiala_force(af, p.C_f, p.mu, Fzf)
        Fr = fiala_force(ar, p.C_r, p.mu, Fzr)
        dFf = _fiala_dalpha(af, p.C_f, p.mu, Fzf)
        dFr = _fiala_dalpha(ar, p.C_r, p.mu, Fzr)
        sf = (vy + p.a * wr) / p.vx
        sr = (vy - p.b * wr) / p.vx
        daf_dvy = 1.0 / (p.vx * (1 + sf * sf))
        daf_dwr = p.a * daf_dvy
        dar_dvy = 1.0 / (p.vx * (1 + sr * sr))
        dar_dwr = -p.b * dar_dvy
        cd, sd = np.cos(d), np.sin(d)
        dt = 1.0 / p.f
        nb = X.shape[0]
        A = np.zeros((nb, 4, 4))
        B = np.zeros((nb, 4, 1))
        A[:, 0, 0] = 1.0
        A[:, 0, 1] = dt * (p.vx * np.cos(phi) - vy * np.sin(phi))
        A[:, 0, 2] = dt * np.cos(phi)
        A[:, 1, 1] = 1.0
        A[:, 1, 3] = dt
        A[:, 2, 2] = 1.0 + dt * (dFf * daf_dvy * cd + dFr * dar_dvy) / p.m
        A[:, 2, 3] = dt * ((dFf * daf_dwr * cd + dFr * dar_dwr) / p.m - p.vx)
        A[:, 3, 2] = dt * (p.a * dFf * daf_dvy * cd - p.b * dFr * dar_dvy) / p.Iz
        A[:, 3, 3] = 1.0 + dt * (p.a * dFf * daf_dwr * cd - p.b * dFr * dar_dwr) / p.Iz
        # alpha_f depends on delta with slope -1
        dFf_dd = -dFf * cd - Ff * sd
        B[:, 2, 0] = dt * dFf_dd / p.m
        B[:, 3, 0] = dt * p.a * dFf_dd / p.Iz
        return A, B


class LinearSystem(DynamicsModel):
    """``x' = A x + B u`` with exact Jacobians."""

    def __init__(self, A, B, u_max=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.B = np.asarray(B, dtype=np.float64).reshape(self.A.shape[0], -1)
        self.n, self.m = self.B.shape
        if self.A.shape != (self.n, self.n):
            raise ValueError("A must be square and match B rows")
        bound = np.inf if u_max is None else u_max
        self.u_max = np.broadcast_to(np.asarray(bound, dtype=np.float64), (self.m,)).copy()
        self.u_min = -self.u_max

    def step_batch(self, X, U):
        return X @ self.A.T + U @ self.B.T

    def step_jac_batch(self, X, U):
        nb = X.shape[0]
        return (
            self.step_batch(X, U),
            np.broadcast_to(self.A, (nb, self.n, self.n)).copy(),
            np.broadcast_to(self.B, (nb, self.n, self.m)).copy(),
        )


def lq_test_system(n: int, m: int, seed: int, radius: float = 0.95, u_max=None) -> LinearSystem:
    """Random linear system with spectral radius below ``radius`` (< 1)."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    rho = max(abs(np.linalg.eigvals(A)))
    A *= rng.uniform(0.5, radius) / rho
    B = rng.standard_normal((n, m)) / math.sqrt(n)
    return LinearSystem(A, B, u_max=u_max)

