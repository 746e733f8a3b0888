import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmpc.dynamics import (LinearSystem, Vehicle, VehicleParams, fiala_alpha_max, fiala_force, jacobians,
                           lq_test_system, slip_angles, tire_loads)

P = VehicleParams()


def test_table_params():
    assert (P.k1, P.k2, P.m, P.a, P.b, P.Iz, P.mu, P.f, P.vx) == (-88000, -94000, 1500, 1.14, 1.40, 2420, 1, 20, 16)
    assert P.C_f == 88000 and P.C_r == 94000


@pytest.mark.parametrize("field", ["m", "Iz", "a", "b", "f", "mu", "vx", "g"])
def test_params_positive(field):
    with pytest.raises(ValueError):
        VehicleParams(**{field: 0.0})


def test_tire_loads_table():
    f, r = tire_loads(P)
    assert f == pytest.approx(1.40 / 2.54 * 1500 * 9.81, rel=1e-14)
    assert r == pytest.approx(1.14 / 2.54 * 1500 * 9.81, rel=1e-14)


def test_tire_loads_symmetric():
    assert tire_loads(VehicleParams(m=1000, a=1, b=1, g=10)) == (5000, 5000)
    f, r = tire_loads(VehicleParams(a=1.3, b=1.3))
    assert f == r == pytest.approx(1500 * 9.81 / 2)


@given(st.floats(500, 5000), st.floats(0.5, 3), st.floats(0.5, 3))
def test_tire_loads_sum(m, a, b):
    f, r = tire_loads(VehicleParams(m=m, a=a, b=b))
    assert f + r == pytest.approx(m * 9.81, rel=1e-12)


def test_slip_trivial():
    assert slip_angles([0, 0, 0, 0], 0.0, P) == (0, 0)
    af, ar = slip_angles([0, 0, 0, 0], 0.1, P)
    assert af == pytest.approx(-0.1) and ar == 0


def test_slip_table_value():
    # independent scalar evaluation of both arctan expressions
    af, ar = slip_angles([0, 0, 0.5, 0.1], 0.02, P)
    assert af == pytest.approx(0.01835617909906247, abs=1e-15)
    assert ar == pytest.approx(0.022496204277883902, abs=1e-15)


def test_fiala_zero_and_errors():
    assert fiala_force(0.0, 88000, 1, 8000) == 0
    for bad in [(0.1, 0, 1, 1), (0.1, 1, 0, 1), (0.1, 1, 1, 0), (0.1, -88000, 1, 8000)]:
        with pytest.raises(ValueError):
            fiala_force(*bad)


def cubic(alpha, C, mu, Fz):
    t = math.tan(alpha)
    return -C * t * (C * C * t * t / (27 * (mu * Fz) ** 2) - C * abs(t) / (3 * mu * Fz) + 1)


@pytest.mark.parametrize("C,mu,Fz", [(88000, 1, 8110.63), (94000, 0.7, 6604.37), (30000, 1.2, 3000)])
def test_fiala_continuity_at_alpha_max(C, mu, Fz):
    am = fiala_alpha_max(C, mu, Fz)
    assert math.tan(am) == pytest.approx(3 * mu * Fz / C)
    assert abs(cubic(am, C, mu, Fz)) == pytest.approx(mu * Fz, rel=1e-12)
    assert fiala_force(am, C, mu, Fz) == pytest.approx(-mu * Fz, rel=1e-12)
    assert fiala_force(am * (1 + 1e-9), C, mu, Fz) == pytest.approx(-mu * Fz, rel=1e-12)
    assert fiala_force(-am, C, mu, Fz) == pytest.approx(mu * Fz, rel=1e-12)


def test_fiala_linear_regime():
    C, Fz = 88000, 8107
    # leading correction of the cubic is C|a| / (3 mu Fz): 1% at |a| ~ 0.00276, 1.8% at 0.005
    for a in np.linspace(-0.005, 0.005, 21):
        if a == 0:
            continue
        rel = abs(fiala_force(a, C, 1, Fz) / (-C * a) - 1)
        assert rel <= C * abs(a) / (3 * Fz) * 1.01
        if abs(a) <= 0.0027:
            assert rel < 0.01


@given(st.floats(-1.5, 1.5), st.floats(1e3, 2e5), st.floats(0.1, 2), st.floats(100, 2e4))
def test_fiala_odd_and_bounded(alpha, C, mu, Fz):
    F = fiala_force(alpha, C, mu, Fz)
    assert fiala_force(-alpha, C, mu, Fz) == pytest.approx(-F, abs=1e-9)
    assert abs(F) <= mu * Fz * (1 + 1e-12)
    assert F * alpha <= 0


def test_step_equilibrium():
    v = Vehicle()
    np.testing.assert_array_equal(v.step(np.zeros(4), np.zeros(1)), np.zeros(4))


def test_step_heading_quarter_turn():
    x = Vehicle().step(np.array([0, np.pi / 2, 0, 0]), np.zeros(1))
    assert x[0] == pytest.approx(0.8, abs=1e-14)


def test_step_composed_oracle():
    # hand-chained tire loads -> slip angles -> Fiala -> Euler update
    x = Vehicle().step(np.array([0, 0, 0.5, 0.1]), np.array([0.02]))
    np.testing.assert_allclose(x, [0.025, 0.005, 0.3064134619750173, 0.11930552126026633], rtol=1e-13, atol=1e-15)


def test_step_batch_matches_single(rng):
    v = Vehicle()
    X = rng.uniform(-1, 1, (7, 4))
    U = rng.uniform(-0.2, 0.2, (7, 1))
    out = v.step_batch(X, U)
    for i in range(7):
        np.testing.assert_array_equal(out[i], v.step(X[i], U[i]))


def test_linear_jacobians_exact():
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    B = np.array([[0.0], [0.5]])
    a, b = jacobians(LinearSystem(A, B), np.ones(2), np.ones(1))
    np.testing.assert_array_equal(a, A)
    np.testing.assert_array_equal(b, B)


def test_vehicle_jacobian_origin():
    A, B = jacobians(Vehicle(), np.zeros(4), np.zeros(1))
    assert A.shape == (4, 4) and B.shape == (4, 1)
    assert A[0, 1] == pytest.approx(16 / 20, rel=1e-8)


def test_fd_vs_analytic_jacobians(rng):
    fd, an = Vehicle(jacobian="fd"), Vehicle(jacobian="analytic")
    X = rng.uniform([-4, -0.3, -2, -0.5], [4, 0.3, 2, 0.5], (10, 4))
    U = rng.uniform(-0.2, 0.2, (10, 1))
    _, A1, B1 = fd.step_jac_batch(X, U)
    _, A2, B2 = an.step_jac_batch(X, U)
    assert np.abs(A1 - A2).max() / np.abs(A2).max() < 1e-4
    assert np.abs(B1 - B2).max() / np.abs(B2).max() < 1e-4


def test_rollout_jac_matches_steps(rng):
    v = Vehicle()
    x0 = rng.uniform(-1, 1, 4)
    U = rng.uniform(-0.2, 0.2, (6, 1))
    X, A, B = v.rollout_jac(x0, U)
    x = x0
    for i in range(6):
        xn, a, b = v.step_jac_batch(x[None], U[i : i + 1])
        np.testing.assert_allclose(X[i], xn[0], rtol=1e-14)
        np.testing.assert_allclose(A[i], a[0], rtol=1e-7, atol=1e-10)
        np.testing.assert_allclose(B[i], b[0], rtol=1e-7, atol=1e-10)
        x = xn[0]


def test_lq_test_system_deterministic_and_stable():
    a, b = lq_test_system(3, 2, 7), lq_test_system(3, 2, 7)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.B, b.B)
    for seed in range(100):
        s = lq_test_system(1 + seed % 4, 1 + seed % 2, seed)
        assert max(abs(np.linalg.eigvals(s.A))) < 1


def test_scalar_linear_system():
    s = LinearSystem([[0.9]], [[0.1]])
    assert s.step(np.array([1.0]), np.array([1.0]))[0] == pytest.approx(1.0)
    assert np.all(np.isinf(s.u_max))
