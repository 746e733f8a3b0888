"""Run configuration files (TOML).

Every section maps onto a dataclass; unknown sections or keys are rejected so
that typos fail loudly before any computation starts. See ``configs/`` for
complete examples and README.md for the schema.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from rmpc.dynamics import LinearSystem, Vehicle, VehicleParams
from rmpc.objective import QuadraticUtility, vehicle_utility
from rmpc.policy import PolicyArchitecture
from rmpc.solver import ShootingConfig
from rmpc.trainer import SamplingDomain, TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    kind: str = "vehicle"
    u_max: float = 0.2
    jacobian: str = "fd"
    vehicle: dict = field(default_factory=dict)
    A: list | None = None
    B: list | None = None


@dataclass
class UtilitySection:
    C: list | None = None
    W: list | None = None
    Q: list | None = None
    R: list | None = None


@dataclass
class PolicySection:
    hidden: int = 64
    depth: int = 2
    cell: str = "gru"


@dataclass
class SolverSection:
    oracle: str = "shooting"
    max_iterations: int = 500
    tolerance: float = 1e-6
    starts: int = 8
    seed: int = 0
    closed_loop_starts: int = 2


@dataclass
class EvaluateSection:
    samples: int = 200
    seed: int = 123
    cycles: list = field(default_factory=list)
    episodes: int = 50
    steps: int = 200
    episode_seed: int = 7
    episode_x0_low: list | None = None
    episode_x0_high: list | None = None
    episode_amplitude: list | None = None
    episode_wavelength: list | None = None
    episode_offset: list | None = None
    relative_start: bool = True
    solver_closed_loop: bool = True


@dataclass
class BenchmarkSection:
    trials: int = 20
    warmup: int = 3
    seed: int = 11
    starts: int = 1


@dataclass
class SimulateSection:
    cycles: list = field(default_factory=list)
    budget_ms: float = 0.0
    budget_mode: str = "conservative"
    synthetic_cycle_ms: list | None = None
    solver: bool = True
    perturb: dict = field(default_factory=dict)
    steps: int = 200
    seed: int = 3


@dataclass
class GradcheckSection:
    lq_instances: int = 20
    vehicle_instances: int = 3
    hidden: int = 4
    horizon: int = 5
    lq_tolerance: float = 1e-6
    vehicle_tolerance: float = 1e-4
    seed: int = 0


@dataclass
class OutputSection:
    dir: str = "runs/default"


SECTIONS = {
    "model": ModelSection,
    "utility": UtilitySection,
    "policy": PolicySection,
    "trainer": TrainerConfig,
    "domain": SamplingDomain,
    "solver": SolverSection,
    "evaluate": EvaluateSection,
    "benchmark": BenchmarkSection,
    "simulate": SimulateSection,
    "gradcheck": GradcheckSection,
    "output": OutputSection,
}


@dataclass
class RunConfig:
    model: ModelSection
    utility: UtilitySection
    policy: PolicySection
    trainer: TrainerConfig
    domain: SamplingDomain
    solver: SolverSection
    evaluate: EvaluateSection
    benchmark: BenchmarkSection
    simulate: SimulateSection
    gradcheck: GradcheckSection
    output: OutputSection
    raw: dict = field(default_factory=dict, repr=False)

    # -- builders ---------------------------------------------------------

    def build_model(self, perturb: dict | None = None):
        m = self.model
        if m.kind == "vehicle":
            params = VehicleParams(**m.vehicle)
            if perturb:
                params = params.perturbed(perturb)
            return Vehicle(params, u_max=m.u_max, jacobian=m.jacobian)
        if perturb:
            raise ConfigError("plant perturbation is only defined for the vehicle model")
        return LinearSystem(m.A, m.B, u_max=m.u_max)

    def build_utility(self):
        u = self.utility
        if all(v is None for v in dataclasses.astuple(u)):
            if self.model.kind == "vehicle":
                return vehicle_utility()
            n = np.asarray(self.model.A).shape[0]
            mdim = np.asarray(self.model.B).reshape(n, -1).shape[1]
            return QuadraticUtility(np.eye(n)[:1], [[1.0]], np.zeros((n, n)), np.eye(mdim))
        if any(v is None for v in dataclasses.astuple(u)):
            raise ConfigError("utility needs all of C, W, Q, R when any is given")
        return QuadraticUtility(u.C, u.W, u.Q, u.R)

    def build_arch(self) -> PolicyArchitecture:
        return PolicyArchitecture(hidden=self.policy.hidden, depth=self.policy.depth, cell=self.policy.cell,
                                  output_scale=(float(self.model.u_max),))

    def shooting(self, starts=None) -> ShootingConfig:
        s = self.solver
        return ShootingConfig(max_iterations=s.max_iterations, tolerance=s.tolerance,
                              starts=starts or s.starts, seed=s.seed)

    def episode_domain(self) -> SamplingDomain:
        e, d = self.evaluate, self.domain
        return SamplingDomain(
            x0_low=tuple(e.episode_x0_low or d.x0_low),
            x0_high=tuple(e.episode_x0_high or d.x0_high),
            amplitude=tuple(e.episode_amplitude or d.amplitude),
            wavelength=tuple(e.episode_wavelength or d.wavelength),
            offset=tuple(e.episode_offset or d.offset),
            arc_step=d.arc_step,
            ref_dim=d.ref_dim,
        )

    def training_digest_source(self) -> dict:
        """The parts of the config that determine training."""
        return {k: self.raw.get(k, {}) for k in ("model", "utility", "policy", "trainer", "domain")}


def _section(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    kwargs = {k: (tuple(v) if isinstance(v, list) and cls in (SamplingDomain,) else v) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    if "domain" not in data:
        raise ConfigError("missing required section [domain]")
    parts = {name: _section(name, cls, data.get(name, {})) for name, cls in SECTIONS.items()}
    cfg = RunConfig(**parts, raw=data)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    m = cfg.model
    if m.kind not in ("vehicle", "lq"):
        raise ConfigError(f"[model] kind must be 'vehicle' or 'lq', got {m.kind!r}")
    if m.kind == "lq" and (m.A is None or m.B is None):
        raise ConfigError("[model] kind='lq' needs A and B")
    if m.kind == "vehicle":
        known = {f.name for f in dataclasses.fields(VehicleParams)}
        bad = sorted(set(m.vehicle) - known)
        if bad:
            raise ConfigError(f"unknown key(s) in [model.vehicle]: {', '.join(bad)}")
    if not m.u_max > 0:
        raise ConfigError("[model] u_max must be positive")
    if cfg.solver.oracle not in ("shooting", "lqr"):
        raise ConfigError("[solver] oracle must be 'shooting' or 'lqr'")
    if cfg.solver.oracle == "lqr" and m.kind != "lq":
        raise ConfigError("[solver] oracle='lqr' requires a linear model")
    if cfg.simulate.budget_mode not in ("conservative", "speculative"):
        raise ConfigError("[simulate] budget_mode must be 'conservative' or 'speculative'")
    try:
        model = cfg.build_model()
        cfg.build_utility()
        cfg.build_arch()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.domain.state_dim != model.n:
        raise ConfigError(f"[domain] x0 ranges have {cfg.domain.state_dim} entries, model state has {model.n}")
    for c in list(cfg.evaluate.cycles) + list(cfg.simulate.cycles):
        if not 1 <= int(c) <= cfg.trainer.n_max:
            raise ConfigError(f"cycle count {c} outside [1, n_max={cfg.trainer.n_max}]")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)
