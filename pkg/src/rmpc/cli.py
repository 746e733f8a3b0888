"""Command line entry point: ``rmpc <command> --config run.toml``.

Commands write everything under the output directory (``--out`` or
``[output] dir``). Set ``RMPC_LOG`` to a logging level name for more or less
chatter. Exit status is 0 on success, 1 when a command's own checks fail or a
run diverges, 2 on configuration/IO errors and 3 on a degenerate error
denominator.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from rmpc import gradcheck, svg
from rmpc.checkpoint import CheckpointError, config_digest, load_checkpoint, save_checkpoint
from rmpc.config import ConfigError, RunConfig, load_config
from rmpc.policy import Policy
from rmpc.runtime import (BudgetedController, FixedCycleController, PlantDivergence, ScriptedClock,
                          SolverController, closed_loop, linear_fit, sample_episodes, timing_benchmark,
                          write_episode_csv)
from rmpc.solver import DegenerateDenominator, lqr_exact, normalised_error, solve_shooting
from rmpc.trainer import TrainingDiverged, sample, train

log = logging.getLogger("rmpc")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DEGENERATE = 0, 1, 2, 3

VEHICLE_STATES = ["y", "phi", "v_y", "w_r"]


class CommandError(RuntimeError):
    def __init__(self, message, status=EXIT_USAGE):
        super().__init__(message)
        self.status = status


# -- helpers ---------------------------------------------------------------


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v)} to TOML")


def dump_toml(data: dict) -> str:
    """Enough TOML for run configs: tables of scalars, arrays and one level of sub-tables."""
    out = []
    for name in sorted(data):
        table = data[name]
        subs = {k: v for k, v in table.items() if isinstance(v, dict)}
        out.append(f"[{name}]")
        out += [f"{k} = {_toml_value(v)}" for k, v in table.items() if k not in subs]
        out.append("")
        for k, sub in subs.items():
            out.append(f"[{name}.{k}]")
            out += [f"{kk} = {_toml_value(vv)}" for kk, vv in sub.items()]
            out.append("")
    return "\n".join(out)


def _ci95(values):
    values = np.asarray(values, float)
    if values.size < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / math.sqrt(values.size))


def _apply_seed(cfg: RunConfig, command, seed):
    if seed is None:
        return
    if command == "train":
        cfg.trainer = dataclasses.replace(cfg.trainer, seed=seed)
        cfg.raw.setdefault("trainer", {})["seed"] = seed
    elif command == "evaluate":
        cfg.evaluate.seed = seed
        cfg.evaluate.episode_seed = seed
    elif command == "benchmark":
        cfg.benchmark.seed = seed
    elif command == "simulate":
        cfg.simulate.seed = seed
    elif command == "gradcheck":
        cfg.gradcheck.seed = seed


def _new_policy(cfg: RunConfig, model) -> Policy:
    shift, scale = cfg.domain.normalisation()
    return Policy(cfg.build_arch(), model.n, cfg.domain.ref_dim, model.m, shift, scale)


def _load_policy(cfg: RunConfig, path):
    path = Path(path)
    if not path.exists():
        raise CommandError(f"checkpoint not found: {path}")
    try:
        policy, theta, header = load_checkpoint(path, expected_arch=cfg.build_arch())
    except CheckpointError as exc:
        raise CommandError(str(exc)) from exc
    digest = config_digest(cfg.training_digest_source())
    if header["config_digest"] and header["config_digest"] != digest:
        log.warning("%s was trained under a different config (digest %s, current %s)",
                    path, header["config_digest"][:12], digest[:12])
    return policy, theta, header


def _checkpoint_path(args, out: Path) -> Path:
    return Path(args.checkpoint) if args.checkpoint else out / "final.rmpc"


def _oracle(cfg: RunConfig, model, utility, starts=None):
    if cfg.solver.oracle == "lqr":
        return lambda x0, refs: lqr_exact(x0, refs, model, utility)
    scfg = cfg.shooting(starts)
    return lambda x0, refs: solve_shooting(x0, refs, model, utility, scfg)


def _dt(cfg: RunConfig, model):
    return 1.0 / model.params.f if cfg.model.kind == "vehicle" else 1.0


def _state_names(cfg: RunConfig, model):
    return VEHICLE_STATES if cfg.model.kind == "vehicle" else [f"x{j}" for j in range(model.n)]


# -- commands --------------------------------------------------------------


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    model, utility = cfg.build_model(), cfg.build_utility()
    policy = _new_policy(cfg, model)
    digest = config_digest(cfg.training_digest_source())
    (out / "config.toml").write_text(dump_toml(cfg.raw))
    log.info("training %d parameters, digest %s", policy.n_params, digest[:12])

    def on_checkpoint(theta, k):
        save_checkpoint(out / f"ckpt_{k:06d}.rmpc", policy, theta, digest, k)

    try:
        theta, hist = train(cfg.trainer, cfg.domain, model, utility, policy, on_checkpoint=on_checkpoint)
        status = EXIT_OK
    except TrainingDiverged as exc:
        log.error("%s", exc)
        save_checkpoint(out / "diverged.rmpc", policy, exc.last_good, digest, exc.iteration - 1)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    save_checkpoint(out / "final.rmpc", policy, theta, digest, len(hist.J))
    _write_csv(out / "history.csv", ["iteration", "J", "grad_norm"],
               zip(hist.iteration, hist.J, hist.grad_norm))
    _write_csv(out / "timing.csv", ["iteration", "wall_ms"], zip(hist.iteration, hist.wall_ms))
    (out / "train_J.svg").write_text(svg.line_chart(
        [("J", hist.iteration, hist.J)], title="training objective", xlabel="iteration", ylabel="J", logy=True))
    print(f"trained {len(hist.J)} iterations, final J = {hist.J[-1]:.6g}")
    return status


def _e_n_table(policy, theta, u_star, x0s, refs, n_max, pooled):
    """Rows ``(N, mean, ci95)`` for one parameter vector given cached oracle controls."""
    den_all = None
    if pooled:
        stacked = np.concatenate([u_star[N] for N in range(1, n_max + 1)])
        den_all = stacked.max(axis=0) - stacked.min(axis=0)
    rows = []
    for N in range(1, n_max + 1):
        u_pol, _ = policy.forward(theta, x0s, refs[:, :N])
        res = normalised_error(u_star[N], u_pol, den_all)
        rows.append((N, res["e"], _ci95(res["per_sample"])))
    return rows


def cmd_evaluate(cfg: RunConfig, out: Path, args) -> int:
    model, utility = cfg.build_model(), cfg.build_utility()
    ckpt = _checkpoint_path(args, out)
    policy, theta, _ = _load_policy(cfg, ckpt)
    n_max = cfg.trainer.n_max
    ev = cfg.evaluate

    rng = np.random.default_rng(ev.seed)
    x0s, refs = sample(cfg.domain, n_max, rng, ev.samples)
    oracle = _oracle(cfg, model, utility)
    log.info("solving %d x %d oracle problems", ev.samples, n_max)
    u_star = {N: np.stack([oracle(x0s[b], refs[b, :N]).first_control for b in range(ev.samples)])
              for N in range(1, n_max + 1)}
    try:
        rows = _e_n_table(policy, theta, u_star, x0s, refs, n_max, pooled=False)
        pooled = _e_n_table(policy, theta, u_star, x0s, refs, n_max, pooled=True)
    except DegenerateDenominator as exc:
        raise CommandError(f"cannot normalise the policy error: {exc}", EXIT_DEGENERATE) from exc
    _write_csv(out / "e_N.csv", ["N", "e_N_mean", "e_N_ci95"], rows)
    _write_csv(out / "e_N_pooled.csv", ["N", "e_N_mean", "e_N_ci95"], pooled)
    for N, e, ci in rows:
        print(f"e_{N} = {100 * e:.3f}% (+/- {100 * ci:.3f})")
    series = [("per-N range", [r[0] for r in rows], [r[1] for r in rows]),
              ("pooled range", [r[0] for r in pooled], [r[1] for r in pooled])]
    (out / "e_N.svg").write_text(svg.line_chart(series, title="policy error vs horizon", xlabel="N",
                                                ylabel="e_N", logy=True))

    # error along training, from sibling checkpoints
    siblings = sorted(ckpt.parent.glob("ckpt_*.rmpc"))
    if siblings:
        it_rows = []
        for path in siblings:
            p, th, header = _load_policy(cfg, path)
            for N, e, _ in _e_n_table(p, th, u_star, x0s, refs, n_max, pooled=False):
                it_rows.append((header["iteration"], N, e))
        _write_csv(out / "e_N_iteration.csv", ["iteration", "N", "e_N_mean"], it_rows)
        shown = sorted({1, max(1, n_max // 2), n_max})
        series = [(f"N={N}", [r[0] for r in it_rows if r[1] == N], [r[2] for r in it_rows if r[1] == N])
                  for N in shown]
        (out / "e_N_iteration.svg").write_text(svg.line_chart(
            series, title="policy error during training", xlabel="iteration", ylabel="e_N", logy=True))

    # closed-loop performance
    cycles = [int(c) for c in ev.cycles] or list(range(1, n_max + 1))
    erng = np.random.default_rng(ev.episode_seed)
    ex0, erefs = sample_episodes(cfg.episode_domain(), ev.episodes, ev.steps, n_max, erng, ev.relative_start)

    def run(ctl):
        Ls, diverged = [], 0
        for e in range(ev.episodes):
            try:
                Ls.append(closed_loop(ctl, model, utility, ex0[e], erefs[e], ev.steps, n_max).L)
            except PlantDivergence as exc:
                log.warning("episode %d diverged at step %d", e, exc.step)
                Ls.append(math.inf)
                diverged += 1
        return Ls, diverged

    L_rows = []
    for c in cycles:
        Ls, div = run(FixedCycleController(policy, theta, c))
        L_rows.append(("policy", c, float(np.mean(Ls)), _ci95(Ls), div))
        print(f"L(c={c}) = {L_rows[-1][2]:.6g}")
    if ev.solver_closed_loop:
        ctl = SolverController(model, utility, n_max, cfg.shooting(cfg.solver.closed_loop_starts),
                               exact=cfg.solver.oracle == "lqr")
        Ls, div = run(ctl)
        L_rows.append(("solver", n_max, float(np.mean(Ls)), _ci95(Ls), div))
        print(f"L(solver, N={n_max}) = {L_rows[-1][2]:.6g}")
    _write_csv(out / "L_vs_c.csv", ["controller", "c", "L_mean", "L_ci95", "diverged"], L_rows)
    pol = [r for r in L_rows if r[0] == "policy"]
    series = [("policy", [r[1] for r in pol], [r[2] for r in pol])]
    if ev.solver_closed_loop:
        series.append(("solver", [cycles[0], cycles[-1]], [L_rows[-1][2]] * 2))
    (out / "L_vs_c.svg").write_text(svg.line_chart(series, title="closed-loop cost vs cycles", xlabel="c",
                                                   ylabel="L", logy=True))
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig, out: Path, args) -> int:
    model, utility = cfg.build_model(), cfg.build_utility()
    policy, theta, _ = _load_policy(cfg, _checkpoint_path(args, out))
    n_max = cfg.trainer.n_max
    b = cfg.benchmark
    rng = np.random.default_rng(b.seed)
    x0s, refs = sample(cfg.domain, n_max, rng, max(b.trials, 1))
    solve = _oracle(cfg, model, utility, starts=b.starts)
    rows = timing_benchmark(policy, theta, solve, x0s, refs, range(1, n_max + 1), b.trials, b.warmup)
    _write_csv(out / "benchmark.csv", ["N", "policy_ms", "solver_ms", "ratio"],
               [(r["N"], r["policy_ms"], r["solver_ms"], r["ratio"]) for r in rows])
    (out / "benchmark.svg").write_text(svg.bar_chart(
        [r["N"] for r in rows], ["policy", "solver"],
        [[r["policy_ms"] for r in rows], [r["solver_ms"] for r in rows]],
        title="computation time per control step", xlabel="N", ylabel="median ms"))
    slope, _, r2 = linear_fit([r["N"] for r in rows], [r["policy_ms"] for r in rows])
    for r in rows:
        print(f"N={r['N']:2d}  policy {r['policy_ms']:.3f} ms  solver {r['solver_ms']:.3f} ms  "
              f"ratio {r['ratio']:.1f}")
    print(f"policy time slope {slope:.4f} ms/cycle, R^2 = {r2:.3f}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out: Path, args) -> int:
    model, utility = cfg.build_model(), cfg.build_utility()
    policy, theta, _ = _load_policy(cfg, _checkpoint_path(args, out))
    sim, n_max = cfg.simulate, cfg.trainer.n_max
    plant = cfg.build_model(sim.perturb) if sim.perturb else model
    rng = np.random.default_rng(sim.seed)
    x0s, refs = sample_episodes(cfg.episode_domain(), 1, sim.steps, n_max, rng, cfg.evaluate.relative_start)

    variants = [(f"c{int(c)}", FixedCycleController(policy, theta, int(c))) for c in (sim.cycles or [n_max])]
    if sim.budget_ms > 0:
        clock = ScriptedClock(pattern=[t / 1e3 for t in sim.synthetic_cycle_ms]) if sim.synthetic_cycle_ms \
            else None
        kw = {"clock": clock} if clock else {}
        variants.append(("budgeted", BudgetedController(policy, theta, n_max, sim.budget_ms / 1e3,
                                                        mode=sim.budget_mode, **kw)))
    if sim.solver:
        variants.append(("solver", SolverController(model, utility, n_max,
                                                    cfg.shooting(cfg.solver.closed_loop_starts),
                                                    exact=cfg.solver.oracle == "lqr")))

    dt, names = _dt(cfg, model), _state_names(cfg, model)
    status = EXIT_OK
    series = []
    for name, ctl in variants:
        try:
            res = closed_loop(ctl, plant, utility, x0s[0], refs[0], sim.steps, n_max)
        except PlantDivergence as exc:
            print(f"error: {name}: plant diverged at step {exc.step}", file=sys.stderr)
            status = EXIT_CHECK
            continue
        write_episode_csv(out / f"episode_{name}.csv", res, dt, names)
        if name == "budgeted":
            ks, counts = np.unique(res.ks, return_counts=True)
            print("budgeted k histogram: " + ", ".join(f"{k}:{n}" for k, n in zip(ks, counts)))
        print(f"{name}: L = {res.L:.6g}")
        t = [(j + 1) * dt for j in range(sim.steps)]
        if not series:
            series.append(("reference", t, list(res.references[:, 0])))
        series.append((name, t, list(res.states[1:, 0])))
    (out / "tracking.svg").write_text(svg.line_chart(series, title="tracking", xlabel="time [s]",
                                                     ylabel=names[0]))
    return status


def cmd_gradcheck(cfg: RunConfig, out: Path, args) -> int:
    g = cfg.gradcheck
    lq, veh = gradcheck.run_suite(g.lq_instances, g.vehicle_instances, g.hidden, g.horizon, g.seed)
    rows = [("lq", r.label, r.n_params, r.error) for r in lq] + [("vehicle", r.label, r.n_params, r.error)
                                                                   for r in veh]
    _write_csv(out / "gradcheck.csv", ["family", "instance", "n_params", "rel_error"], rows)
    lq_max = max((r.error for r in lq), default=0.0)
    veh_max = max((r.error for r in veh), default=0.0)
    ok = lq_max < g.lq_tolerance and veh_max < g.vehicle_tolerance
    print(f"lq: {len(lq)} instances, max relative error {lq_max:.3e} (tolerance {g.lq_tolerance:g})")
    print(f"vehicle: {len(veh)} instances, max relative error {veh_max:.3e} (tolerance {g.vehicle_tolerance:g})")
    print("gradcheck " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "simulate": cmd_simulate,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    p = argparse.ArgumentParser(prog="rmpc", description="Recurrent model predictive control.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="run configuration (TOML)")
    p.add_argument("--checkpoint", help="policy checkpoint (default: <out>/final.rmpc)")
    p.add_argument("--out", help="output directory (default: [output] dir)")
    p.add_argument("--seed", type=int, help="override the command's random seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("RMPC_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        _apply_seed(cfg, args.command, args.seed)
        out = Path(args.out or cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.status
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
