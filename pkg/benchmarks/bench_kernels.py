"""Compiled vs numpy vehicle kernels.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--csv out.csv]

Times one Euler step, one step with Jacobians (batched, as used during
training) and a single-trajectory rollout with Jacobians (as used by the
shooting solver), then one training iteration and one shooting solve with
each backend swapped in.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from rmpc import _kernels_py, dynamics
from rmpc.objective import batch_objective_and_gradient, vehicle_utility
from rmpc.policy import Policy, PolicyArchitecture
from rmpc.solver import ShootingConfig, solve_shooting
from rmpc.trainer import sample, vehicle_domain

try:
    from rmpc import _kernels as _compiled
except ImportError:
    _compiled = None


def best_ms(fn, repeat):
    number = max(1, repeat // 10)
    return 1e3 * min(timeit.repeat(fn, number=number, repeat=10)) / number


def kernel_rows(mod, repeat):
    p = dynamics.VehicleParams().packed()
    rng = np.random.default_rng(0)
    rows = []
    for batch in (1, 32, 256):
        X = rng.uniform(-1, 1, (batch, 4))
        U = rng.uniform(-0.2, 0.2, (batch, 1))
        rows.append((f"step B={batch}", best_ms(lambda: mod.vehicle_step(p, X, U), repeat)))
        rows.append((f"step_jac B={batch}", best_ms(lambda: mod.vehicle_step_jac(p, X, U), repeat)))
    x0 = rng.uniform(-1, 1, 4)
    Us = rng.uniform(-0.2, 0.2, (10, 1))
    rows.append(("rollout_jac N=10", best_ms(lambda: mod.vehicle_rollout_jac(p, x0, Us), repeat)))
    return rows


def end_to_end_rows(mod, repeat):
    dynamics._kernels = mod
    v, ut = dynamics.Vehicle(), vehicle_utility()
    dom = vehicle_domain()
    pol = Policy(PolicyArchitecture(hidden=64, depth=2), 4, 1, 1, *dom.normalisation())
    th = pol.init(0)
    x0, refs = sample(dom, 10, np.random.default_rng(1), 32)
    r = max(1, repeat // 50)
    return [
        ("train iteration B=32 N=10", best_ms(lambda: batch_objective_and_gradient(pol, th, v, ut, x0, refs), r)),
        ("shooting solve N=10", best_ms(lambda: solve_shooting(x0[0], refs[0], v, ut, ShootingConfig(starts=1)), r)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    backends = [("numpy", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    if _compiled is None:
        print("compiled kernels not built; timing the numpy fallback only", file=sys.stderr)
    saved = dynamics._kernels
    table = {}
    try:
        for name, mod in backends:
            for label, ms in kernel_rows(mod, args.repeat) + end_to_end_rows(mod, args.repeat):
                table.setdefault(label, {})[name] = ms
    finally:
        dynamics._kernels = saved
    names = [n for n, _ in backends]
    print(f"{'case':28s}" + "".join(f"{n + ' ms':>14s}" for n in names) + ("   speedup" if len(names) == 2 else ""))
    rows = []
    for label, t in table.items():
        line = f"{label:28s}" + "".join(f"{t[n]:14.4f}" for n in names)
        if len(names) == 2:
            line += f"{t['numpy'] / t['cython']:9.1f}x"
        print(line)
        rows.append([label] + [t[n] for n in names])
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case"] + [f"{n}_ms" for n in names])
            w.writerows(rows)


if __name__ == "__main__":
    main()
