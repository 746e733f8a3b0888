"""Acceptance criteria, one test per criterion.

Criteria 5-7 need a trained vehicle policy (configs/vehicle_acceptance.toml,
5e4 iterations, about 25-30 minutes on one core). The checkpoint is cached in
runs/vehicle_acceptance/ and reused when its config digest and iteration
count match; set RMPC_ACCEPTANCE_RETRAIN=1 to force a fresh run.
"""
import csv
import math
import os
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from rmpc.checkpoint import config_digest, load_checkpoint
from rmpc.cli import main
from rmpc.config import load_config
from rmpc.dynamics import lq_test_system
from rmpc.gradcheck import run_suite
from rmpc.objective import QuadraticUtility
from rmpc.runtime import BudgetedController, ScriptedClock, prefix_rule, timing_benchmark
from rmpc.solver import ShootingConfig, lqr_exact, solve_shooting
from rmpc.trainer import sample

ROOT = Path(__file__).resolve().parents[1]
VEHICLE_CFG = ROOT / "configs" / "vehicle_acceptance.toml"
LQ_CFG = ROOT / "configs" / "lq_quickstart.toml"


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def random_lq(seed, rng):
    n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
    model = lq_test_system(n, m, seed)
    Qh = rng.standard_normal((n, n))
    ut = QuadraticUtility(rng.standard_normal((1, n)), [[1.0]], 0.1 * Qh @ Qh.T, np.diag(rng.uniform(0.1, 2, m)))
    return model, ut, n


def test_c1_gradient_correctness():
    lq, veh = run_suite(lq_instances=20, vehicle_instances=3, hidden=4, horizon=5, seed=0)
    e_lq, e_veh = max(r.error for r in lq), max(r.error for r in veh)
    ok = e_lq < 1e-6 and e_veh < 1e-4
    record(1, ok, f"LQ max rel err {e_lq:.2e} (<1e-6, {len(lq)} instances); vehicle {e_veh:.2e} (<1e-4)")
    assert ok


def test_c2_tail_consistency():
    rng = np.random.default_rng(2)
    worst = 0.0
    for seed in range(20):
        model, ut, n = random_lq(seed, rng)
        N = int(rng.integers(1, 11))
        x0, refs = rng.standard_normal(n), rng.standard_normal((N, 1))
        full = lqr_exact(x0, refs, model, ut)
        x, total = x0, 0.0
        for i in range(N):
            u = lqr_exact(x, refs[i:], model, ut).first_control
            x = model.step(x, u)
            total += float(ut.evaluate(x[None], refs[i][None], u[None])[0])
        worst = max(worst, abs(total - full.cost))
    record(2, worst < 1e-8, f"max |sum of tail first-control costs - V*| = {worst:.2e} (<1e-8, 20 instances)")
    assert worst < 1e-8


def test_c3_solver_oracle_agreement():
    rng = np.random.default_rng(3)
    worst = 0.0
    for seed in range(50):
        model, ut, n = random_lq(seed, rng)
        N = int(rng.integers(1, 11))
        x0, refs = rng.standard_normal(n), rng.standard_normal((N, 1))
        a = solve_shooting(x0, refs, model, ut, ShootingConfig(starts=2, tolerance=1e-10))
        worst = max(worst, float(np.abs(a.first_control - lqr_exact(x0, refs, model, ut).first_control).max()))
    record(3, worst < 1e-6, f"max |u*_0 shooting - Riccati| = {worst:.2e} (<1e-6, 50 instances)")
    assert worst < 1e-6


@pytest.mark.slow
def test_c4_lq_desk_learning(tmp_path):
    cfg = load_config(LQ_CFG)
    assert cfg.model.kind == "lq" and np.asarray(cfg.model.A).shape[0] <= 2
    assert cfg.trainer.n_max <= 5 and cfg.policy.hidden <= 16 and cfg.trainer.max_iterations <= 20000
    out = tmp_path / "lq"
    assert main(["train", "--config", str(LQ_CFG), "--out", str(out)]) == 0
    assert main(["evaluate", "--config", str(LQ_CFG), "--out", str(out)]) == 0
    rows = [(int(r["N"]), float(r["e_N_mean"])) for r in read_rows(out / "e_N.csv")]
    worst = max(e for _, e in rows)
    ok = len(rows) == cfg.trainer.n_max and worst < 0.02
    record(4, ok, "e_N vs LQR: " + ", ".join(f"N={N} {100 * e:.2f}%" for N, e in rows) + " (all <2%)")
    assert ok


# -- vehicle ---------------------------------------------------------------


@pytest.fixture(scope="module")
def vehicle_run():
    cfg = load_config(VEHICLE_CFG)
    out = ROOT / "runs" / "vehicle_acceptance"
    ckpt = out / "final.rmpc"
    digest = config_digest(cfg.training_digest_source())
    fresh = os.environ.get("RMPC_ACCEPTANCE_RETRAIN") == "1"
    cached = False
    if ckpt.exists() and not fresh:
        _, _, header = load_checkpoint(ckpt)
        cached = header["config_digest"] == digest and header["iteration"] == cfg.trainer.max_iterations
    if not cached:
        assert main(["train", "--config", str(VEHICLE_CFG), "--out", str(out)]) == 0
    ev = out / "eval"
    ev.mkdir(exist_ok=True)
    assert main(["evaluate", "--config", str(VEHICLE_CFG), "--checkpoint", str(ckpt), "--out", str(ev)]) == 0
    return cfg, ckpt, ev


@pytest.mark.slow
def test_c5_vehicle_reproduction(vehicle_run):
    cfg, _, ev = vehicle_run
    assert cfg.trainer.n_max == 10 and cfg.policy.hidden == 64 and cfg.policy.depth == 2
    assert cfg.trainer.max_iterations >= 50000
    e = {int(r["N"]): float(r["e_N_mean"]) for r in read_rows(ev / "e_N.csv")}
    L = {(r["controller"], int(r["c"])): float(r["L_mean"]) for r in read_rows(ev / "L_vs_c.csv")}
    n_max = cfg.trainer.n_max
    worst = max(e[N] for N in e if N >= 5)
    gap = L[("policy", n_max)] / L[("solver", n_max)] - 1
    ok = worst < 0.05 and abs(gap) <= 0.10 and cfg.evaluate.episodes >= 50
    record(5, ok, f"max e_N (N>=5) {100 * worst:.2f}% (<5%); L(c={n_max}) {L[('policy', n_max)]:.3f} vs solver "
                  f"{L[('solver', n_max)]:.3f}, gap {100 * gap:+.1f}% (within 10%, {cfg.evaluate.episodes} episodes)")
    assert ok


@pytest.mark.slow
def test_c6_cycle_monotone(vehicle_run):
    cfg, _, ev = vehicle_run
    n_max = cfg.trainer.n_max
    c0 = math.ceil(n_max / 3)
    L = {int(r["c"]): float(r["L_mean"]) for r in read_rows(ev / "L_vs_c.csv") if r["controller"] == "policy"}
    cs = list(range(c0, n_max + 1))
    assert all(c in L for c in cs), "evaluate.cycles must cover ceil(N_max/3)..N_max"
    steps_ok = all(L[b] <= 1.02 * L[a] for a, b in zip(cs, cs[1:]))
    ok = steps_ok and L[n_max] <= L[c0]
    record(6, ok, "mean L: " + ", ".join(f"c={c} {L[c]:.2f}" for c in cs) + " (each step <= +2%)")
    assert ok


@pytest.mark.slow
def test_c7_timing_gap(vehicle_run):
    cfg, ckpt, _ = vehicle_run
    policy, theta, _ = load_checkpoint(ckpt)
    model, ut = cfg.build_model(), cfg.build_utility()
    N = cfg.trainer.n_max
    x0s, refs = sample(cfg.domain, N, np.random.default_rng(7), 20)
    scfg = cfg.shooting(starts=1)
    row = timing_benchmark(policy, theta, lambda x, r: solve_shooting(x, r, model, ut, scfg), x0s, refs, [N],
                           trials=20, warmup=3)[0]
    ok = row["policy_ms"] < row["solver_ms"]
    record(7, ok, f"N={N}: policy {row['policy_ms']:.2f} ms vs one shooting solve {row['solver_ms']:.2f} ms, "
                  f"ratio {row['ratio']:.1f}x")
    assert ok


def test_c8_budget_rule():
    from rmpc.policy import Policy, PolicyArchitecture

    pol = Policy(PolicyArchitecture(hidden=3, depth=1), 4, 1, 1)
    th = pol.init(0)
    rng = np.random.default_rng(8)
    n_max = 10
    cases = []
    for _ in range(120):
        times = list(rng.uniform(1e-4, 5e-3, n_max))
        cases.append((times, float(rng.uniform(1e-5, sum(times) * 1.1))))
    # boundaries: budget below the first cycle, budget above everything, exact prefix sums
    for _ in range(10):
        times = list(rng.uniform(1e-4, 5e-3, n_max))
        cases += [(times, times[0] * 0.5), (times, sum(times) * 2), (times, sum(times[:4]))]
    mismatches, seen = 0, set()
    for times, T in cases:
        ctl = BudgetedController(pol, th, n_max, T, clock=ScriptedClock(pattern=times), mode="speculative")
        _, k = ctl.act(np.zeros(4), np.zeros(n_max))
        expected = prefix_rule(ctl.cycle_times, T)
        mismatches += k != expected
        seen.add(k)
    ok = mismatches == 0 and {1, n_max} <= seen
    record(8, ok, f"{len(cases)} cases, {mismatches} mismatches vs prefix-sum rule; k range {min(seen)}..{max(seen)}")
    assert ok


def test_c9_reproducibility(tmp_path):
    cfg_text = LQ_CFG.read_text().replace("max_iterations = 20000", "max_iterations = 300") \
        .replace("checkpoint_every = 5000", "checkpoint_every = 100")
    p = tmp_path / "short.toml"
    p.write_text(cfg_text)
    for d in ("a", "b"):
        assert main(["train", "--config", str(p), "--out", str(tmp_path / d), "--seed", "42"]) == 0
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("history.csv", "final.rmpc", "ckpt_000100.rmpc", "ckpt_000300.rmpc")]
    record(9, all(same), "history.csv and checkpoint bytes identical across two runs" if all(same)
           else f"byte mismatch: {same}")
    assert all(same)
