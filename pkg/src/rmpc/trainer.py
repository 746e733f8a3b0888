"""Offline training loop: sample, differentiate, step, repeat."""
from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from rmpc.objective import RolloutDivergence, batch_objective_and_gradient

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 2e-4
    batch_size: int = 256
    max_iterations: int = 10000
    epsilon: float = 1e-4
    window: int = 100
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    n_max: int = 15
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:  # 0 allowed as a null step
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.n_max < 1 or self.window < 1 or self.max_iterations < 0:
            raise ValueError("batch_size, n_max, window must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"optimizer must be 'gd' or 'adam', got {self.optimizer!r}")


@dataclass(frozen=True)
class SamplingDomain:
    """Where initial states and reference windows are drawn from.

    References are sinusoids in the arc coordinate
    ``r_i = A sin(w s_i + phase) + offset`` with ``s_i = i * arc_step``;
    ``w = 2 pi / wavelength`` with the wavelength drawn uniformly.
    """

    x0_low: tuple
    x0_high: tuple
    amplitude: tuple = (0.0, 3.0)
    wavelength: tuple = (60.0, 200.0)
    offset: tuple = (-2.0, 2.0)
    arc_step: float = 0.8
    ref_dim: int = 1

    def __post_init__(self):
        lo, hi = np.asarray(self.x0_low, float), np.asarray(self.x0_high, float)
        if lo.shape != hi.shape or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)) or np.any(lo >= hi):
            raise ValueError("x0 ranges must be finite with low < high")
        for name in ("amplitude", "wavelength", "offset"):
            a, b = getattr(self, name)
            if not (math.isfinite(a) and math.isfinite(b)) or a > b:
                raise ValueError(f"{name} range must be finite with low <= high")
        if self.wavelength[0] <= 0 or self.amplitude[0] < 0 or self.arc_step <= 0:
            raise ValueError("wavelength and arc_step must be positive, amplitude non-negative")

    @property
    def state_dim(self) -> int:
        return len(self.x0_low)

    def normalisation(self):
        """Affine ``(shift, scale)`` for policy inputs ``[x0, r]``."""
        lo, hi = np.asarray(self.x0_low, float), np.asarray(self.x0_high, float)
        r_mid = 0.5 * (self.offset[0] + self.offset[1])
        r_half = 0.5 * (self.offset[1] - self.offset[0]) + self.amplitude[1]
        shift = np.concatenate([(lo + hi) / 2, np.full(self.ref_dim, r_mid)])
        scale = np.concatenate([(hi - lo) / 2, np.full(self.ref_dim, max(r_half, 1e-3))])
        return shift, scale

    def max_reference_step(self) -> float:
        return self.amplitude[1] * 2 * math.pi / self.wavelength[0] * self.arc_step


def vehicle_domain(**overrides) -> SamplingDomain:
    kw = dict(x0_low=(-4.0, -0.3, -2.0, -0.5), x0_high=(4.0, 0.3, 2.0, 0.5))
    kw.update(overrides)
    return SamplingDomain(**kw)


def sample(domain: SamplingDomain, n_max: int, rng: np.random.Generator, size: int | None = None):
    """Draw ``(x0, refs)``; batched shapes ``(B, n)`` and ``(B, N, p)`` when ``size`` is given."""
    B = 1 if size is None else size
    lo, hi = np.asarray(domain.x0_low, float), np.asarray(domain.x0_high, float)
    x0 = rng.uniform(lo, hi, size=(B, lo.size))
    p = domain.ref_dim
    amp = rng.uniform(*domain.amplitude, size=(B, 1, p))
    wl = rng.uniform(*domain.wavelength, size=(B, 1, p))
    phase = rng.uniform(0.0, 2 * math.pi, size=(B, 1, p))
    off = rng.uniform(*domain.offset, size=(B, 1, p))
    s = (np.arange(1, n_max + 1) * domain.arc_step)[None, :, None]
    refs = amp * np.sin(2 * math.pi / wl * s + phase) + off
    if size is None:
        return x0[0], refs[0]
    return x0, refs


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta, grad):
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class GradientDescent:
    def __init__(self, lr):
        self.lr = lr

    def step(self, theta, grad):
        return theta - self.lr * grad


def make_optimizer(cfg: TrainerConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return GradientDescent(cfg.learning_rate)


@dataclass
class History:
    iteration: list = field(default_factory=list)
    J: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)

    def smoothed(self, window):
        J = np.asarray(self.J)
        if J.size < window:
            return J.copy()
        c = np.cumsum(np.insert(J, 0, 0.0))
        return (c[window:] - c[:-window]) / window


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration, cause, last_good):
        self.iteration = iteration
        self.cause = cause
        self.last_good = last_good
        super().__init__(f"training diverged at iteration {iteration}: {cause}")


def train(cfg: TrainerConfig, domain: SamplingDomain, model, utility, policy, theta0=None,
          on_checkpoint=None, on_iteration=None, clock=time.perf_counter):
    """Run the training loop.

    Stops when the change of the ``window``-averaged J between consecutive
    iterations is at most ``epsilon`` (checked once ``window + 1`` values
    exist) or after ``max_iterations``. ``on_checkpoint(theta, iteration)``
    is called every ``checkpoint_every`` iterations and at the end.
    Returns ``(theta, history)``.
    """
    rng = np.random.default_rng(cfg.seed)
    theta = policy.init(cfg.seed) if theta0 is None else np.array(theta0, dtype=np.float64)
    opt = make_optimizer(cfg)
    hist = History()
    recent = deque(maxlen=cfg.window + 1)
    last_good = theta.copy()
    for k in range(1, cfg.max_iterations + 1):
        t0 = clock()
        x0, refs = sample(domain, cfg.n_max, rng, cfg.batch_size)
        try:
            J, g = batch_objective_and_gradient(policy, theta, model, utility, x0, refs)
        except RolloutDivergence as exc:
            raise TrainingDiverged(k, exc, last_good) from exc
        if not (math.isfinite(J) and np.all(np.isfinite(g))):
            raise TrainingDiverged(k, "non-finite objective or gradient", last_good)
        last_good = theta
        theta = opt.step(theta, g)
        hist.iteration.append(k)
        hist.J.append(J)
        hist.grad_norm.append(float(np.linalg.norm(g)))
        hist.wall_ms.append((clock() - t0) * 1e3)
        if on_iteration is not None:
            on_iteration(k, J, theta)
        if on_checkpoint is not None and cfg.checkpoint_every and k % cfg.checkpoint_every == 0:
            on_checkpoint(theta, k)
        recent.append(J)
        if len(recent) == cfg.window + 1:
            # consecutive window means differ by (J_new - J_oldest) / window
            delta = abs(recent[-1] - recent[0]) / cfg.window
            if delta <= cfg.epsilon:
                log.info("converged at iteration %d (smoothed |dJ| = %.3g)", k, delta)
                break
        if k % 500 == 0:
            log.info("iter %d  J=%.5g  |g|=%.3g", k, J, hist.grad_norm[-1])
    if on_checkpoint is not None:
        on_checkpoint(theta, len(hist.J))
    return theta, hist
