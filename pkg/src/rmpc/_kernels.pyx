# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled vehicle kernels; mirrors ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport tan, atan, sin, cos, fabs

cnp.import_array()

cdef double FD_REL = 1e-6
cdef double FD_MIN = 1e-6


cdef inline double _fiala(double alpha, double C, double mu, double Fz) nogil:
    cdef double t = tan(alpha)
    cdef double mf = mu * Fz
    if fabs(t) <= 3.0 * mf / C:
        return -C * t * (C * C * t * t / (27.0 * mf * mf) - C * fabs(t) / (3.0 * mf) + 1.0)
    if alpha > 0:
        return -mf
    if alpha < 0:
        return mf
    return 0.0


cdef inline void _step(const double* p, const double* z, double* out) nogil:
    # z = [y, phi, vy, wr, delta]
    cdef double Cf = p[0], Cr = p[1], mass = p[2], a = p[3], b = p[4]
    cdef double Iz = p[5], mu = p[6], f = p[7], vx = p[8], Fzf = p[9], Fzr = p[10]
    cdef double phi = z[1], vy = z[2], wr = z[3], d = z[4]
    cdef double af = atan((vy + a * wr) / vx) - d
    cdef double ar = atan((vy - b * wr) / vx)
    cdef double Ff = _fiala(af, Cf, mu, Fzf)
    cdef double Fr = _fiala(ar, Cr, mu, Fzr)
    cdef double dt = 1.0 / f
    cdef double cd = cos(d)
    out[0] = z[0] + dt * (vx * sin(phi) + vy * cos(phi))
    out[1] = phi + dt * wr
    out[2] = vy + dt * ((Ff * cd + Fr) / mass - vx * wr)
    out[3] = wr + dt * ((a * Ff * cd - b * Fr) / Iz)


def vehicle_step(double[::1] p, X, U):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], i, k
    out = np.empty((n, 4))
    cdef double[:, ::1] O = out
    cdef double z[5]
    with nogil:
        for i in range(n):
            for k in range(4):
                z[k] = Xv[i, k]
            z[4] = Uv[i, 0]
            _step(&p[0], z, &O[i, 0])
    return out


def vehicle_step_jac(double[::1] p, X, U):
    """Step plus central finite-difference Jacobians, batched over rows."""
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], i, j, k
    out = np.empty((n, 4))
    A = np.empty((n, 4, 4))
    Bm = np.empty((n, 4, 1))
    cdef double[:, ::1] O = out
    cdef double[:, :, ::1] Av = A
    cdef double[:, :, ::1] Bv = Bm
    cdef double z[5]
    cdef double zp[5]
    cdef double fp[4]
    cdef double fm[4]
    cdef double h, zj
    with nogil:
        for i in range(n):
            for k in range(4):
                z[k] = Xv[i, k]
            z[4] = Uv[i, 0]
            _step(&p[0], z, &O[i, 0])
            for j in range(5):
                for k in range(5):
                    zp[k] = z[k]
                zj = z[j]
                h = FD_REL * fabs(zj)
                if h < FD_MIN:
                    h = FD_MIN
                zp[j] = zj + h
                _step(&p[0], zp, fp)
                zp[j] = zj - h
                _step(&p[0], zp, fm)
                for k in range(4):
                    if j < 4:
                        Av[i, k, j] = (fp[k] - fm[k]) / (2.0 * h)
                    else:
                        Bv[i, k, 0] = (fp[k] - fm[k]) / (2.0 * h)
    return out, A, Bm


def vehicle_rollout_jac(double[::1] p, x0, U):
    """Simulate a control sequence from ``x0``; return states (N, 4) and
    per-step finite-difference Jacobians ``A (N, 4, 4)``, ``B (N, 4, 1)``."""
    cdef double[::1] xv = np.ascontiguousarray(x0, dtype=np.float64).reshape(-1)
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64).reshape(-1, 1)
    cdef Py_ssize_t N = Uv.shape[0], i, j, k
    X = np.empty((N, 4))
    A = np.empty((N, 4, 4))
    Bm = np.empty((N, 4, 1))
    cdef double[:, ::1] Xo = X
    cdef double[:, :, ::1] Av = A
    cdef double[:, :, ::1] Bv = Bm
    cdef double z[5]
    cdef double zp[5]
    cdef double fp[4]
    cdef double fm[4]
    cdef double h, zj
    with nogil:
        for k in range(4):
            z[k] = xv[k]
        for i in range(N):
            z[4] = Uv[i, 0]
            _step(&p[0], z, &Xo[i, 0])
            for j in range(5):
                for k in range(5):
                    zp[k] = z[k]
                zj = z[j]
                h = FD_REL * fabs(zj)
                if h < FD_MIN:
                    h = FD_MIN
                zp[j] = zj + h
                _step(&p[0], zp, fp)
                zp[j] = zj - h
                _step(&p[0], zp, fm)
                for k in range(4):
                    if j < 4:
                        Av[i, k, j] = (fp[k] - fm[k]) / (2.0 * h)
                    else:
                        Bv[i, k, 0] = (fp[k] - fm[k]) / (2.0 * h)
            for k in range(4):
                z[k] = Xo[i, k]
    return X, A, Bm


def fiala(double alpha, double C, double mu, double Fz):
    return _fiala(alpha, C, mu, Fz)
