"""Simulated walkers and the stand-in sensing stack.

Walkers execute delivered navigation instructions with human-like timing:
a reaction delay before anything takes effect, slowed movement while turning,
systematic over/under turning, persistent heading drift while walking, and a
short pause after on-track feedback. A noisy localizer and a small bootstrap
particle filter provide the observation side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .statespace import DT, Action, ActionType, HumanState, wrap_angle
from .world import FloorPlan

# per-axis position noise; mean radial error = sigma * sqrt(pi/2) ~= 1.8 m
SIGMA_XY = 1.436

# a 90 degree turn must take at least this long past the reaction delay
MIN_TURN_TIME = 0.5

_COLLISION_STEP = 0.1
_TURN_GROUP = (ActionType.TURN, ActionType.DIAGONAL_TURN, ActionType.SLIGHT_TURN)

IDLE = "idle"
WALKING = "walking"
TURNING = "turning"
PAUSED = "paused"


class PopulationError(ValueError):
    pass


@dataclass(frozen=True)
class WalkerProfile:
    """Per-walker behavior parameters."""

    base_speed: float            # m/s while walking
    reaction_time: float         # s from instruction delivery to action onset
    turn_speed_factor: float     # speed multiplier while turning, in [0, 1]
    turn_rate: float             # rad/s while turning
    veer_rate: float             # rad/s heading drift while walking
    overturn_bias: float         # rad of systematic turn overshoot (signed)
    heading_ack_delay: float     # s pause after on-track feedback

    def __post_init__(self):
        if self.base_speed <= 0:
            raise PopulationError("base_speed must be positive")
        if self.reaction_time < 0:
            raise PopulationError("reaction_time must be non-negative")
        if self.turn_rate <= 0:
            raise PopulationError("turn_rate must be positive")
        if not 0.0 <= self.turn_speed_factor <= 1.0:
            raise PopulationError("turn_speed_factor must be in [0, 1]")
        if self.heading_ack_delay < 0:
            raise PopulationError("heading_ack_delay must be non-negative")

    def to_dict(self) -> dict:
        return {
            "base_speed": self.base_speed,
            "reaction_time": self.reaction_time,
            "turn_speed_factor": self.turn_speed_factor,
            "turn_rate": self.turn_rate,
            "veer_rate": self.veer_rate,
            "overturn_bias": self.overturn_bias,
            "heading_ack_delay": self.heading_ack_delay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WalkerProfile":
        return cls(**{k: float(d[k]) for k in (
            "base_speed", "reaction_time", "turn_speed_factor", "turn_rate",
            "veer_rate", "overturn_bias", "heading_ack_delay")})


@dataclass(frozen=True)
class PopulationSpec:
    """Distribution parameters for sampling walker profiles.

    Timing parameters are normal with a truncation floor; the rest are
    uniform over the given ranges. Ranges are chosen so simulated walking
    speed curves bracket typical pedestrian averages.
    """

    reaction_mean: float = 1.37
    reaction_sd: float = 1.08
    ack_mean: float = 0.91
    ack_sd: float = 0.71
    turn_span_mean: float = 3.54     # reaction + full 90 degree turn, seconds
    turn_span_sd: float = 1.17
    base_speed_range: tuple[float, float] = (0.7, 1.5)
    turn_speed_factor_range: tuple[float, float] = (0.3, 0.9)
    veer_rate_range: tuple[float, float] = (0.0, 0.06)
    overturn_bias_range: tuple[float, float] = (-0.15, 0.15)

    def __post_init__(self):
        for name in ("reaction_sd", "ack_sd", "turn_span_sd"):
            if getattr(self, name) < 0:
                raise PopulationError(f"{name} must be non-negative")
        for name in ("base_speed_range", "turn_speed_factor_range",
                     "veer_rate_range", "overturn_bias_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise PopulationError(f"{name} must satisfy lo <= hi")
        if self.base_speed_range[0] <= 0:
            raise PopulationError("base_speed_range must be positive")
        if self.turn_span_mean <= self.reaction_mean + MIN_TURN_TIME:
            raise PopulationError("turn_span_mean too small for a full turn")

    def to_dict(self) -> dict:
        return {
            "reaction_mean": self.reaction_mean, "reaction_sd": self.reaction_sd,
            "ack_mean": self.ack_mean, "ack_sd": self.ack_sd,
            "turn_span_mean": self.turn_span_mean,
            "turn_span_sd": self.turn_span_sd,
            "base_speed_range": list(self.base_speed_range),
            "turn_speed_factor_range": list(self.turn_speed_factor_range),
            "veer_rate_range": list(self.veer_rate_range),
            "overturn_bias_range": list(self.overturn_bias_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationSpec":
        kw = dict(d)
        for name in ("base_speed_range", "turn_speed_factor_range",
                     "veer_rate_range", "overturn_bias_range"):
            if name in kw:
                kw[name] = tuple(float(v) for v in kw[name])
        return cls(**kw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "PopulationSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _trunc_normal(rng: np.random.Generator, mean: float, sd: float,
                  low: float) -> float:
    """Normal(mean, sd) conditioned on being > low, by rejection."""
    if sd == 0.0:
        if mean <= low:
            raise PopulationError("degenerate distribution below its floor")
        return mean
    while True:
        v = float(rng.normal(mean, sd))
        if v > low:
            return v


def sample_profile(rng: np.random.Generator,
                   spec: PopulationSpec | None = None) -> WalkerProfile:
    """Draw one walker profile.

    The turn rate is derived from a sampled total turn span: the time a
    90 degree turn takes including the reaction delay.
    """
    spec = spec if spec is not None else PopulationSpec()
    reaction = _trunc_normal(rng, spec.reaction_mean, spec.reaction_sd, 0.0)
    ack = _trunc_normal(rng, spec.ack_mean, spec.ack_sd, 0.0)
    span = _trunc_normal(rng, spec.turn_span_mean, spec.turn_span_sd,
                         reaction + MIN_TURN_TIME)
    turn_rate = (math.pi / 2.0) / (span - reaction)
    base_speed = float(rng.uniform(*spec.base_speed_range))
    factor = float(rng.uniform(*spec.turn_speed_factor_range))
    veer = float(rng.uniform(*spec.veer_rate_range))
    bias = float(rng.uniform(*spec.overturn_bias_range))
    return WalkerProfile(base_speed, reaction, factor, turn_rate, veer, bias, ack)


@dataclass(frozen=True)
class WalkerState:
    """Walker pose plus instruction queue and current task.

    The queue holds (effect_time, action) pairs already shifted by the
    profile's reaction delay; nothing in it changes behavior before its
    effect time.
    """

    t: float
    x: float
    y: float
    alpha: float
    speed: float = 0.0
    task: str = IDLE
    queue: tuple = ()
    turn_target: float | None = None
    resume_task: str = IDLE
    pause_until: float = 0.0
    veer_sign: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", wrap_angle(self.alpha))

    def pose(self) -> HumanState:
        return HumanState(self.x, self.y, self.alpha)


def initial_state(x: float, y: float, alpha: float,
                  rng: np.random.Generator) -> WalkerState:
    # drift direction is a per-episode trait, drawn once
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return WalkerState(0.0, x, y, alpha, veer_sign=sign)


def _advance(plan: FloorPlan, x: float, y: float, alpha: float,
             dist: float) -> tuple[float, float]:
    """Move along the heading, stopping at the last free sample point."""
    if dist <= 0.0:
        return x, y
    n = max(1, int(math.ceil(dist / _COLLISION_STEP)))
    ca, sa = math.cos(alpha), math.sin(alpha)
    gx, gy = x, y
    for k in range(1, n + 1):
        nx = x + ca * dist * k / n
        ny = y + sa * dist * k / n
        if not plan.is_free(nx, ny):
            break
        gx, gy = nx, ny
    return gx, gy


def _enqueue(queue: list, t: float, action: Action, reaction: float) -> None:
    # the newest un-executed instruction of a kind wins; a fresh turn
    # replaces a queued turn of any size
    if action.a_type in _TURN_GROUP:
        queue[:] = [(ts, a) for ts, a in queue if a.a_type not in _TURN_GROUP]
    else:
        queue[:] = [(ts, a) for ts, a in queue if a.a_type is not action.a_type]
    queue.append((t + reaction, action))


def step_walker(ws: WalkerState, profile: WalkerProfile,
                delivered: Sequence[Action] = (), dt: float = DT,
                plan: FloorPlan | None = None,
                rng: np.random.Generator | None = None) -> WalkerState:
    """Advance the walker one tick, applying any newly effective instructions.

    Instructions delivered this tick become effective after the profile's
    reaction delay. Turns rotate toward the commanded heading (biased by the
    walker's habitual over/undershoot) at reduced speed; walking drifts by
    the veer rate with a per-episode sign; on-track feedback pauses the
    walker briefly. Movement never enters an occupied cell.
    """
    t = ws.t
    queue = list(ws.queue)
    task = ws.task
    alpha = ws.alpha
    turn_target = ws.turn_target
    resume = ws.resume_task
    pause_until = ws.pause_until

    for action in delivered:
        _enqueue(queue, t, action, profile.reaction_time)

    due = [(ts, a) for ts, a in queue if ts <= t]
    queue = [(ts, a) for ts, a in queue if ts > t]
    for _, action in sorted(due, key=lambda e: e[0]):
        kind = action.a_type
        if kind is ActionType.FORWARD:
            if task is TURNING:
                resume = WALKING
            elif task is PAUSED:
                resume = WALKING
            else:
                task = WALKING
        elif kind in _TURN_GROUP:
            signed = action.turn_angle()
            bias = math.copysign(profile.overturn_bias, signed)
            turn_target = wrap_angle(alpha + signed + bias)
            if task in (IDLE, WALKING):
                resume = task
            task = TURNING
        elif kind is ActionType.INFORMATION:
            # on-track feedback: brief acknowledgement pause, then resume
            if task in (IDLE, WALKING):
                resume = task
            pause_until = t + profile.heading_ack_delay
            task = PAUSED
        # remaining kinds are informational only

    if task is PAUSED and t >= pause_until:
        task = resume

    speed = 0.0
    if task is TURNING:
        remaining = wrap_angle(turn_target - alpha)
        step = profile.turn_rate * dt
        if abs(remaining) <= step:
            alpha = turn_target
            task = resume
            turn_target = None
        else:
            alpha = wrap_angle(alpha + math.copysign(step, remaining))
        speed = profile.base_speed * profile.turn_speed_factor
    elif task is WALKING:
        alpha = wrap_angle(alpha + ws.veer_sign * profile.veer_rate * dt)
        speed = profile.base_speed

    x, y = ws.x, ws.y
    if speed > 0.0 and plan is not None:
        x, y = _advance(plan, x, y, alpha, speed * dt)

    return replace(ws, t=t + dt, x=x, y=y, alpha=alpha, speed=speed,
                   task=task, queue=tuple(queue), turn_target=turn_target,
                   resume_task=resume, pause_until=pause_until)


# ---- sensing ----


@dataclass(frozen=True)
class LocalizerConfig:
    sigma_xy: float = SIGMA_XY     # per-axis position noise, meters
    sigma_alpha: float = 0.1       # heading noise, radians
    n_particles: int = 300

    def __post_init__(self):
        if self.sigma_xy < 0 or self.sigma_alpha < 0:
            raise PopulationError("noise scales must be non-negative")
        if self.n_particles < 1:
            raise PopulationError("n_particles must be at least 1")


def localize(true_state: HumanState, cfg: LocalizerConfig,
             rng: np.random.Generator) -> HumanState:
    """Observe a pose through isotropic Gaussian noise."""
    dx, dy = rng.normal(0.0, cfg.sigma_xy, 2)
    da = rng.normal(0.0, cfg.sigma_alpha)
    return HumanState(true_state.x + dx, true_state.y + dy,
                      wrap_angle(true_state.alpha + da))


def _systematic_resample(rng: np.random.Generator,
                         weights: np.ndarray) -> np.ndarray:
    n = len(weights)
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, rng.uniform(0.0, 1.0 / n) + np.arange(n) / n)


class ParticleFilterTracker:
    """Bootstrap particle filter over position with a constant-velocity
    motion model. The estimate is the weighted particle mean; heading comes
    from the mean velocity once the walker is clearly moving."""

    ACCEL_SIGMA = 0.8      # process noise on velocity, m/s^2
    INIT_VEL_SIGMA = 1.0   # prior spread on velocity, m/s

    def __init__(self, cfg: LocalizerConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.parts: np.ndarray | None = None   # (N, 4): x, y, vx, vy
        self.weights: np.ndarray | None = None
        self._alpha = 0.0

    def update(self, obs: HumanState, dt: float = DT) -> HumanState:
        n = self.cfg.n_particles
        if self.parts is None:
            self.parts = np.empty((n, 4))
            self.parts[:, 0] = obs.x + self.rng.normal(0, self.cfg.sigma_xy, n)
            self.parts[:, 1] = obs.y + self.rng.normal(0, self.cfg.sigma_xy, n)
            self.parts[:, 2:] = self.rng.normal(0, self.INIT_VEL_SIGMA, (n, 2))
            self.weights = np.full(n, 1.0 / n)
        else:
            self.parts[:, 0] += self.parts[:, 2] * dt
            self.parts[:, 1] += self.parts[:, 3] * dt
            # white-acceleration process noise; the position term keeps the
            # cloud from collapsing to zero spread after resampling
            self.parts[:, :2] += self.rng.normal(
                0, 0.5 * self.ACCEL_SIGMA * dt * dt, (n, 2))
            self.parts[:, 2:] += self.rng.normal(0, self.ACCEL_SIGMA * dt, (n, 2))
            # floor keeps the likelihood graded for near-noiseless sensors;
            # winner-take-all weights would let the cloud drift away
            sig = max(self.cfg.sigma_xy, 0.05)
            d2 = ((self.parts[:, 0] - obs.x) ** 2
                  + (self.parts[:, 1] - obs.y) ** 2)
            logw = np.log(self.weights + 1e-300) - d2 / (2.0 * sig * sig)
            logw -= logw.max()
            w = np.exp(logw)
            self.weights = w / w.sum()
        est_x = float(self.weights @ self.parts[:, 0])
        est_y = float(self.weights @ self.parts[:, 1])
        vx = float(self.weights @ self.parts[:, 2])
        vy = float(self.weights @ self.parts[:, 3])
        if math.hypot(vx, vy) > 0.1:
            self._alpha = math.atan2(vy, vx)
        else:
            self._alpha = obs.alpha
        if 1.0 / float(self.weights @ self.weights) < n / 2.0:
            idx = _systematic_resample(self.rng, self.weights)
            self.parts = self.parts[idx]
            self.weights = np.full(n, 1.0 / n)
        return HumanState(est_x, est_y, self._alpha)


def pf_track(observations: Iterable[HumanState], cfg: LocalizerConfig,
             rng: np.random.Generator, dt: float = DT) -> HumanState:
    """Run the tracker over an observation stream; return the final estimate."""
    tracker = ParticleFilterTracker(cfg, rng)
    est = None
    for obs in observations:
        est = tracker.update(obs, dt)
    if est is None:
        raise ValueError("need at least one observation")
    return est
