"""Online side: budgeted anytime control, closed-loop episodes, timing."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass

import numpy as np

from rmpc.solver import ShootingConfig, lqr_exact, solve_shooting


class ScriptedClock:
    """Deterministic clock for tests.

    Each call returns the current time and then advances it by the next
    scripted duration, so a controller that reads the clock once before the
    first cycle and once after every cycle observes exactly ``durations``.
    Use ``load`` to queue the cycle times for the next control step, or pass
    ``pattern`` to have the same cycle times re-queued at every step.
    """

    def __init__(self, durations=(), pattern=None):
        self.t = 0.0
        self._queue = list(durations)
        self.pattern = None if pattern is None else list(pattern)

    def load(self, durations):
        self._queue = list(durations)

    def begin_step(self):
        if self.pattern is not None:
            self._queue = list(self.pattern)

    def __call__(self):
        now = self.t
        if self._queue:
            self.t += self._queue.pop(0)
        return now


def prefix_rule(cycle_times, budget):
    """Cycle count chosen by the prefix-sum rule with known cycle times."""
    total = 0.0
    k = 0
    for t in cycle_times:
        if total + t > budget:
            break
        total += t
        k += 1
    return max(k, 1)


class BudgetedController:
    """Runs policy cycles until the time budget would be exceeded.

    ``mode="conservative"`` predicts the next cycle's cost as the largest
    cycle time seen so far this step and stops when it would not fit.
    ``mode="speculative"`` runs the next cycle and discards its output if the
    budget turned out to be exceeded, which reproduces the prefix-sum rule
    exactly on measured times at the price of overrunning by one cycle.
    At least one cycle always runs.
    """

    def __init__(self, policy, theta, n_max, budget, clock=time.perf_counter, mode="conservative"):
        if budget <= 0:
            raise ValueError("time budget must be positive")
        if mode not in ("conservative", "speculative"):
            raise ValueError(f"unknown budget mode {mode!r}")
        self.policy, self.theta = policy, theta
        self.n_max, self.budget, self.clock, self.mode = n_max, budget, clock, mode
        self.cycle_times: list[float] = []
        self.last_k = 0

    def act(self, x, window):
        window = np.asarray(window, dtype=np.float64).reshape(-1, self.policy.ref_dim)
        n_max = min(self.n_max, window.shape[0])
        x = np.asarray(x, dtype=np.float64)[None]
        times = []
        if hasattr(self.clock, "begin_step"):
            self.clock.begin_step()
        prev = self.clock()
        hidden, u = self.policy.cycle(self.theta, x, window[0:1], None)
        now = self.clock()
        times.append(now - prev)
        prev = now
        # elapsed is accumulated in cycle order so it equals the prefix sums bit for bit
        elapsed = times[0]
        k = 1
        while k < n_max:
            if self.mode == "conservative" and elapsed + max(times) > self.budget:
                break
            if self.mode == "speculative" and elapsed > self.budget:
                break
            hidden_next, u_next = self.policy.cycle(self.theta, x, window[k : k + 1], hidden)
            now = self.clock()
            times.append(now - prev)
            prev = now
            elapsed += times[-1]
            if self.mode == "speculative" and elapsed > self.budget:
                break
            hidden, u, k = hidden_next, u_next, k + 1
        self.cycle_times = times
        self.last_k = k
        return u[0], k


def budgeted_act(ctl: BudgetedController, x, window, budget=None):
    if budget is not None:
        if budget <= 0:
            raise ValueError("time budget must be positive")
        ctl.budget = budget
    return ctl.act(x, window)


class FixedCycleController:
    def __init__(self, policy, theta, cycles):
        self.policy, self.theta, self.cycles = policy, theta, cycles

    def act(self, x, window):
        return self.policy.act(self.theta, x, window[: self.cycles]), self.cycles


class SolverController:
    """Receding-horizon MPC: solve, apply the first control, shift."""

    def __init__(self, model, utility, horizon, cfg: ShootingConfig = ShootingConfig(), exact=False,
                 warm_start=True):
        self.model, self.utility, self.horizon = model, utility, horizon
        self.cfg, self.exact, self.warm_start = cfg, exact, warm_start
        self._prev = None

    def reset(self):
        self._prev = None

    def act(self, x, window):
        refs = np.asarray(window, dtype=np.float64)[: self.horizon]
        if self.exact:
            sol = lqr_exact(x, refs, self.model, self.utility)
        else:
            warm = None
            if self.warm_start and self._prev is not None:
                warm = np.concatenate([self._prev[1:], self._prev[-1:]])
            sol = solve_shooting(x, refs, self.model, self.utility, self.cfg, warm_start=warm)
        self._prev = sol.controls
        return sol.first_control, self.horizon


class PlantDivergence(RuntimeError):
    def __init__(self, step, state):
        self.step, self.state = step, state
        super().__init__(f"plant diverged at step {step}: {state}")


@dataclass
class ClosedLoopResult:
    states: np.ndarray  # (steps + 1, n)
    controls: np.ndarray  # (steps, m)
    references: np.ndarray  # (steps, p)
    utilities: np.ndarray  # (steps,)
    ks: np.ndarray  # (steps,)
    wall_s: np.ndarray  # (steps,)
    L: float

    def recompute_L(self, utility) -> float:
        return float(utility.evaluate(self.states[1:], self.references, self.controls).sum())


def lookahead(reference, t, n_max):
    """``r_{t+1} .. r_{t+n_max}`` from ``reference`` (row j is r_{j+1}), holding the last value."""
    idx = np.minimum(np.arange(t, t + n_max), reference.shape[0] - 1)
    return reference[idx]


def closed_loop(controller, plant, utility, x0, reference, steps=200, n_max=15, clock=time.perf_counter):
    """Simulate ``steps`` control steps; row ``j`` of ``reference`` is ``r_{j+1}``."""
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim == 1:
        reference = reference[:, None]
    if hasattr(controller, "reset"):
        controller.reset()
    x = np.asarray(x0, dtype=np.float64)
    X = np.empty((steps + 1, x.size))
    X[0] = x
    U = np.empty((steps, plant.m))
    R = np.empty((steps, reference.shape[1]))
    ls = np.empty(steps)
    ks = np.empty(steps, dtype=int)
    wall = np.empty(steps)
    for t in range(steps):
        window = lookahead(reference, t, n_max)
        t0 = clock()
        u, k = controller.act(x, window)
        wall[t] = clock() - t0
        x = plant.step(x, u)
        if not np.all(np.isfinite(x)) or np.abs(x).max() > 1e6:
            raise PlantDivergence(t + 1, x)
        X[t + 1], U[t], R[t], ks[t] = x, u, window[0], k
        ls[t] = utility.evaluate(x[None], window[0][None], np.asarray(u)[None])[0]
    return ClosedLoopResult(X, U, R, ls, ks, wall, float(ls.sum()))


def _r(v):
    return repr(float(v))


def write_episode_csv(path, result: ClosedLoopResult, dt, state_names=None):
    n = result.states.shape[1]
    names = state_names or [f"x{j}" for j in range(n)]
    p, m = result.references.shape[1], result.controls.shape[1]
    rn = ["r"] if p == 1 else [f"r{j}" for j in range(p)]
    un = ["u"] if m == 1 else [f"u{j}" for j in range(m)]
    cum = np.cumsum(result.utilities)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time_s", *names, *rn, *un, "k", "l", "L"])
        for t in range(result.utilities.size):
            w.writerow([t + 1, _r((t + 1) * dt), *map(_r, result.states[t + 1]),
                        *map(_r, result.references[t]), *map(_r, result.controls[t]),
                        int(result.ks[t]), _r(result.utilities[t]), _r(cum[t])])


def timing_benchmark(policy, theta, solve, x0s, refs, horizons, trials=20, warmup=3, clock=time.perf_counter):
    """Median wall-clock cost of ``c``-cycle policy inference and of ``solve(x0, refs_N)``.

    Returns a list of dicts with keys ``N, policy_ms, solver_ms, ratio``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x0s = np.atleast_2d(x0s)
    rows = []
    for N in horizons:
        pol_t, sol_t = [], []
        for j in range(warmup + trials):
            b = j % x0s.shape[0]
            t0 = clock()
            policy.act(theta, x0s[b], refs[b, :N])
            t1 = clock()
            solve(x0s[b], refs[b, :N])
            t2 = clock()
            if j >= warmup:
                pol_t.append(t1 - t0)
                sol_t.append(t2 - t1)
        pm, sm = 1e3 * float(np.median(pol_t)), 1e3 * float(np.median(sol_t))
        rows.append({"N": N, "policy_ms": pm, "solver_ms": sm, "ratio": sm / pm if pm > 0 else math.inf})
    return rows


def linear_fit(xs, ys):
    """Least-squares slope, intercept and R^2."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(((ys - pred) ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    return float(slope), float(intercept), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def sample_episodes(domain, count, steps, n_max, rng, relative_start=True):
    """Initial states and long references for closed-loop episodes.

    With ``relative_start`` the first state entry is drawn as an offset from
    ``r_1`` rather than in absolute terms. Returns ``(x0s (E, n), refs (E, steps + n_max, p))``.
    """
    from rmpc.trainer import sample

    x0s, refs = sample(domain, steps + n_max, rng, count)
    if relative_start:
        x0s[:, 0] += refs[:, 0, 0]
    return x0s, refs
