"""Finite-difference checks of the rollout gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rmpc.dynamics import Vehicle, lq_test_system
from rmpc.objective import QuadraticUtility, gradient, rollout, vehicle_utility
from rmpc.policy import Policy, PolicyArchitecture
from rmpc.trainer import sample, vehicle_domain


def central_difference(f, theta, h=1e-6):
    g = np.empty_like(theta)
    for j in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += h
        tm[j] -= h
        g[j] = (f(tp) - f(tm)) / (2 * h)
    return g


def relative_error(g, ref):
    """``max|g - ref| / max|ref|`` (normwise, robust to tiny components)."""
    scale = np.abs(ref).max()
    if scale == 0:
        return float(np.abs(g).max())
    return float(np.abs(g - ref).max() / scale)


@dataclass
class CheckResult:
    label: str
    error: float
    n_params: int


def check_instance(policy, theta, model, utility, x0, refs, label="", h=1e-6):
    x0 = np.atleast_2d(x0)

    def V(t):
        return float(rollout(policy, t, model, utility, x0, refs)[0].V.sum())

    _, tape = rollout(policy, theta, model, utility, x0, refs)
    g = gradient(policy, theta, tape)
    return CheckResult(label, relative_error(g, central_difference(V, theta, h)), theta.size)


def random_lq_instance(seed, max_n=4, max_q=8, max_N=8):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(1, 3))
    q = int(rng.integers(2, max_q + 1))
    N = int(rng.integers(1, max_N + 1))
    cell = ("gru", "elman")[seed % 2]
    model = lq_test_system(n, m, seed)
    Qm = rng.standard_normal((n, n))
    utility = QuadraticUtility(np.eye(n)[:1], [[1.0]], 0.1 * Qm @ Qm.T, np.diag(rng.uniform(0.1, 1.0, m)))
    policy = Policy(PolicyArchitecture(hidden=q, depth=int(rng.integers(1, 3)), cell=cell, output_scale=(2.0,)),
                    n, 1, m)
    theta = policy.init(seed) + 0.1 * rng.standard_normal(policy.n_params)
    x0 = rng.standard_normal((2, n))
    refs = rng.standard_normal((2, N, 1))
    return policy, theta, model, utility, x0, refs, f"lq n={n} m={m} q={q} N={N} {cell}"


def random_vehicle_instance(seed, hidden=4, N=5):
    rng = np.random.default_rng(seed)
    dom = vehicle_domain()
    shift, scale = dom.normalisation()
    policy = Policy(PolicyArchitecture(hidden=hidden, depth=1, output_scale=(0.2,)), 4, 1, 1, shift, scale)
    theta = policy.init(seed) + 0.1 * rng.standard_normal(policy.n_params)
    x0, refs = sample(dom, N, rng, 2)
    return policy, theta, Vehicle(), vehicle_utility(), x0, refs, f"vehicle q={hidden} N={N}"


def zero_upstream_check(policy, theta, x0, refs):
    """Gradients for a zero upstream must be exactly zero."""
    _, trace = policy.forward(theta, np.atleast_2d(x0), refs)
    gt, gx = policy.backward(theta, trace, np.zeros((np.atleast_2d(x0).shape[0], policy.out_dim)))
    return bool(not gt.any() and not gx.any())


def run_suite(lq_instances=20, vehicle_instances=3, hidden=4, horizon=5, seed=0):
    lq, veh = [], []
    for i in range(lq_instances):
        *args, label = random_lq_instance(seed + i)
        lq.append(check_instance(*args, label=label))
    for i in range(vehicle_instances):
        *args, label = random_vehicle_instance(seed + i, hidden, horizon)
        veh.append(check_instance(*args, label=label))
    return lq, veh
