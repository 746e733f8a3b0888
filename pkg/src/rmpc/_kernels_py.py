"""Pure numpy implementation of the vehicle kernels.

Used when the compiled extension is unavailable or when
``RMPC_BACKEND=python`` is set. Must stay numerically equivalent to
``_kernels.pyx``.

``params`` is the packed float64 vector
``[C_f, C_r, mass, a, b, I_z, mu, f_hz, v_x, F_zf, F_zr]`` with stiffness
magnitudes and precomputed tire loads.
"""
import numpy as np

FD_REL = 1e-6
FD_MIN = 1e-6


def fiala(alpha, C, mu, Fz):
    t = np.tan(alpha)
    mf = mu * Fz
    t_max = 3.0 * mf / C
    cubic = -C * t * (C * C * t * t / (27.0 * mf * mf) - C * np.abs(t) / (3.0 * mf) + 1.0)
    return np.where(np.abs(t) <= t_max, cubic, -np.sign(alpha) * mf)


def _rhs_step(p, y, phi, vy, wr, d):
    Cf, Cr, mass, a, b, Iz, mu, f, vx, Fzf, Fzr = p
    af = np.arctan((vy + a * wr) / vx) - d
    ar = np.arctan((vy - b * wr) / vx)
    Ff = fiala(af, Cf, mu, Fzf)
    Fr = fiala(ar, Cr, mu, Fzr)
    dt = 1.0 / f
    cd = np.cos(d)
    return (
        y + dt * (vx * np.sin(phi) + vy * np.cos(phi)),
        phi + dt * wr,
        vy + dt * ((Ff * cd + Fr) / mass - vx * wr),
        wr + dt * ((a * Ff * cd - b * Fr) / Iz),
    )


def vehicle_step(p, X, U):
    X = np.asarray(X, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    out = _rhs_step(p, X[:, 0], X[:, 1], X[:, 2], X[:, 3], U[:, 0])
    return np.stack(out, axis=1)


def vehicle_step_jac(p, X, U):
    """Step plus central finite-difference Jacobians, batched over rows."""
    X = np.asarray(X, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    B = X.shape[0]
    Z = np.concatenate([X, U], axis=1)
    h = np.maximum(FD_MIN, FD_REL * np.abs(Z))  # (B, 5)
    # rows: [base, +e0..+e4, -e0..-e4]
    stacked = np.repeat(Z[None], 11, axis=0)
    for j in range(5):
        stacked[1 + j, :, j] += h[:, j]
        stacked[6 + j, :, j] -= h[:, j]
    flat = stacked.reshape(-1, 5)
    F = np.stack(_rhs_step(p, *(flat[:, k] for k in range(5))), axis=1).reshape(11, B, 4)
    J = (F[1:6] - F[6:11]) / (2.0 * h.T[:, :, None])  # (5, B, 4)
    J = np.transpose(J, (1, 2, 0))  # (B, 4, 5)
    return F[0], np.ascontiguousarray(J[:, :, :4]), np.ascontiguousarray(J[:, :, 4:])


def vehicle_rollout_jac(p, x0, U):
    """Simulate a control sequence from ``x0``; return states (N, 4) and
    per-step finite-difference Jacobians ``A (N, 4, 4)``, ``B (N, 4, 1)``."""
    U = np.asarray(U, dtype=np.float64).reshape(-1, 1)
    N = U.shape[0]
    X = np.empty((N, 4))
    A = np.empty((N, 4, 4))
    B = np.empty((N, 4, 1))
    x = np.asarray(x0, dtype=np.float64).reshape(1, 4)
    for i in range(N):
        xn, a, b = vehicle_step_jac(p, x, U[i : i + 1])
        X[i], A[i], B[i] = xn[0], a[0], b[0]
        x = xn
    return X, A, B
