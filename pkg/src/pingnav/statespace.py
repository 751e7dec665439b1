"""State and action encodings plus the polar velocity reparameterization.

World-frame walker states (x, y, heading) are converted into a learning
target ``(rho, beta_dot, alpha_dot)``: linear speed magnitude, rate of change
of the velocity direction, and rate of change of the heading.  The encoding
is invariant to rigid translations and rotations of the input trajectory,
which is what makes instruction-conditioned regression data-efficient, and
``integrate`` is its exact inverse for rolling predictions back into the
world frame.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .world import SurroundState

# Fixed control/resampling period in seconds.
DT = 0.5

# Below this linear speed the velocity direction is considered undefined:
# carry the previous direction forward and report zero direction change.
EPS_SPEED = 0.02


class InvalidActionError(ValueError):
    """Raised for action field combinations outside the instruction vocabulary."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]; the boundary maps to +pi.

    In-range values are returned unchanged so wrapping is idempotent at the
    bit level; rollout continuation relies on that.
    """
    if -math.pi < theta <= math.pi:
        return theta
    w = math.fmod(theta + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


class ActionType(Enum):
    LANDMARK = 0
    FORWARD = 1
    APPROACHING_TURN = 2
    TURN = 3
    DIAGONAL_TURN = 4
    SLIGHT_TURN = 5
    OBSTACLE = 6
    INFORMATION = 7
    DISTANCE_POI = 8


class Direction(Enum):
    LEFT = 0
    RIGHT = 1
    NONE = 2


class Amount(Enum):
    NONE = 0
    SLIGHT = 1
    DIAGONAL = 2
    FULL = 3
    D5 = 4
    D10 = 5
    D20 = 6
    D40 = 7


N_ACTION_TYPES = len(ActionType)
N_DIRECTIONS = len(Direction)
N_AMOUNTS = len(Amount)
ACTION_VEC_SIZE = N_ACTION_TYPES + N_DIRECTIONS + N_AMOUNTS

# Commanded heading change per turn instruction type, radians (unsigned).
TURN_ANGLES = {
    ActionType.TURN: math.pi / 2.0,
    ActionType.DIAGONAL_TURN: math.pi / 4.0,
    ActionType.SLIGHT_TURN: math.pi / 6.0,
}

# Distance quantum in meters for each distance-amount slot.
DISTANCE_QUANTA = {Amount.D5: 5.0, Amount.D10: 10.0, Amount.D20: 20.0, Amount.D40: 40.0}

_TURN_AMOUNT = {
    ActionType.TURN: Amount.FULL,
    ActionType.DIAGONAL_TURN: Amount.DIAGONAL,
    ActionType.SLIGHT_TURN: Amount.SLIGHT,
}


@dataclass(frozen=True)
class Action:
    """One instruction: semantic type plus optional direction and amount."""

    a_type: ActionType
    a_dir: Direction = Direction.NONE
    a_amount: Amount = Amount.NONE

    def validate(self) -> None:
        t, d, m = self.a_type, self.a_dir, self.a_amount
        if t in (ActionType.FORWARD, ActionType.INFORMATION):
            ok = d is Direction.NONE and m is Amount.NONE
        elif t in (ActionType.LANDMARK, ActionType.OBSTACLE):
            ok = m is Amount.NONE
        elif t in _TURN_AMOUNT:
            ok = d is not Direction.NONE and m is _TURN_AMOUNT[t]
        elif t is ActionType.APPROACHING_TURN:
            ok = d is not Direction.NONE and m in (Amount.FULL, Amount.DIAGONAL, Amount.SLIGHT)
        elif t is ActionType.DISTANCE_POI:
            ok = d is Direction.NONE and m in DISTANCE_QUANTA
        else:  # pragma: no cover
            ok = False
        if not ok:
            raise InvalidActionError(f"inconsistent action fields: {t.name}/{d.name}/{m.name}")

    def is_turn(self) -> bool:
        return self.a_type in _TURN_AMOUNT

    def turn_angle(self) -> float:
        """Signed commanded heading change in radians (+left, -right)."""
        base = TURN_ANGLES[self.a_type]
        return base if self.a_dir is Direction.LEFT else -base


FORWARD = Action(ActionType.FORWARD)


def valid_actions() -> tuple[Action, ...]:
    """The full instruction vocabulary, in deterministic enumeration order."""
    out = []
    for t in ActionType:
        for d in Direction:
            for m in Amount:
                a = Action(t, d, m)
                try:
                    a.validate()
                except InvalidActionError:
                    continue
                out.append(a)
    return tuple(out)


def encode_action(a: Action) -> np.ndarray:
    """Concatenated one-hot blocks [type(9) | direction(3) | amount(8)]."""
    a.validate()
    vec = np.zeros(ACTION_VEC_SIZE, dtype=np.float64)
    vec[a.a_type.value] = 1.0
    vec[N_ACTION_TYPES + a.a_dir.value] = 1.0
    vec[N_ACTION_TYPES + N_DIRECTIONS + a.a_amount.value] = 1.0
    return vec


def decode_action(vec: np.ndarray) -> Action:
    vec = np.asarray(vec)
    if vec.shape != (ACTION_VEC_SIZE,):
        raise InvalidActionError(f"action vector must have shape ({ACTION_VEC_SIZE},)")
    blocks = (vec[:N_ACTION_TYPES], vec[N_ACTION_TYPES:N_ACTION_TYPES + N_DIRECTIONS],
              vec[N_ACTION_TYPES + N_DIRECTIONS:])
    for b in blocks:
        if np.count_nonzero(b) != 1:
            raise InvalidActionError("each one-hot block must have exactly one set bit")
    a = Action(ActionType(int(np.argmax(blocks[0]))),
               Direction(int(np.argmax(blocks[1]))),
               Amount(int(np.argmax(blocks[2]))))
    a.validate()
    return a


@dataclass(frozen=True)
class HumanState:
    """Walker pose in the map frame: position in meters, heading in (-pi, pi]."""

    x: float
    y: float
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", wrap_angle(self.alpha))

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class FullState:
    human: HumanState
    surround: "SurroundState"


@dataclass(frozen=True)
class ReparamState:
    """Learning-space state: speed magnitude (>= 0), velocity-direction rate,
    heading rate, all per second."""

    rho: float
    beta_dot: float
    alpha_dot: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.beta_dot, self.alpha_dot], dtype=np.float64)

    @staticmethod
    def from_array(v) -> "ReparamState":
        return ReparamState(float(v[0]), float(v[1]), float(v[2]))


@dataclass(frozen=True)
class ReparamContext:
    """Carries the velocity direction of the step that produced the current
    pose, needed to chain direction-rate encodings and integrations."""

    beta_prev: float
    dt: float = DT


@dataclass(frozen=True)
class Transition:
    """One training atom: reparameterized state, surroundings, and encoded
    instruction at time t, with the observed reparameterized outcome."""

    s_hat: ReparamState
    surround: "SurroundState"
    action_vec: np.ndarray
    s_hat_next: ReparamState


def reparameterize_step(s_t: HumanState, s_next: HumanState,
                        ctx: ReparamContext | None, dt: float = DT
                        ) -> tuple[ReparamState, ReparamContext]:
    """Encode the motion from ``s_t`` to ``s_next``.

    ``ctx`` carries the previous step's velocity direction; pass None at a
    trajectory start (direction rate is then 0 by convention).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    vx = (s_next.x - s_t.x) / dt
    vy = (s_next.y - s_t.y) / dt
    rho = math.hypot(vx, vy)
    beta_prev = s_t.alpha if ctx is None else ctx.beta_prev
    if rho < EPS_SPEED:
        beta = beta_prev
        beta_dot = 0.0
    else:
        beta = math.atan2(vy, vx)
        beta_dot = 0.0 if ctx is None else wrap_angle(beta - beta_prev) / dt
    alpha_dot = wrap_angle(s_next.alpha - s_t.alpha) / dt
    return ReparamState(rho, beta_dot, alpha_dot), ReparamContext(beta, dt)


def reparameterize(s_prev: HumanState, s_t: HumanState, s_next: HumanState,
                   dt: float = DT) -> tuple[ReparamState, ReparamContext]:
    """Three-pose form: encode s_t -> s_next relative to the s_prev -> s_t step."""
    _, ctx0 = reparameterize_step(s_prev, s_t, None, dt)
    return reparameterize_step(s_t, s_next, ctx0, dt)


def integrate(s_hat_next: ReparamState, s_t: HumanState, ctx: ReparamContext
              ) -> tuple[HumanState, ReparamContext]:
    """Invert the reparameterization: apply a predicted motion to a pose.

    ``ctx`` must come from the step that produced ``s_t``.
    """
    dt = ctx.dt
    beta = wrap_angle(ctx.beta_prev + s_hat_next.beta_dot * dt)
    x = s_t.x + s_hat_next.rho * math.cos(beta) * dt
    y = s_t.y + s_hat_next.rho * math.sin(beta) * dt
    alpha = wrap_angle(s_t.alpha + s_hat_next.alpha_dot * dt)
    return HumanState(x, y, alpha), ReparamContext(beta, dt)


def reparameterize_trajectory(poses: Sequence[HumanState], dt: float = DT
                              ) -> tuple[list[ReparamState], list[ReparamContext]]:
    """Encode every step of a pose sequence, threading the direction carry.

    For N+1 poses returns N reparameterized states; entry k describes the
    motion from pose k to pose k+1.
    """
    states, ctxs = [], []
    ctx: ReparamContext | None = None
    for a, b in zip(poses[:-1], poses[1:]):
        r, ctx = reparameterize_step(a, b, ctx, dt)
        states.append(r)
        ctxs.append(ctx)
    return states, ctxs


def integrate_trajectory(start: HumanState, states: Iterable[ReparamState],
                         ctx: ReparamContext) -> list[HumanState]:
    """Roll a sequence of reparameterized motions forward from ``start``."""
    poses = [start]
    for r in states:
        nxt, ctx = integrate(r, poses[-1], ctx)
        poses.append(nxt)
    return poses


def resample_trajectory(rows: Sequence[tuple[float, float, float, float]],
                        dt: float = DT) -> list[tuple[float, float, float, float]]:
    """Resample timestamped (t, x, y, alpha) rows onto a uniform dt grid.

    Positions interpolate linearly, headings along the shortest arc.  The
    grid starts at the first timestamp and includes the last one when it
    falls on the grid (within 1e-9 s).
    """
    if len(rows) < 2:
        raise ValueError("need at least 2 poses to resample")
    ts = [r[0] for r in rows]
    for a, b in zip(ts[:-1], ts[1:]):
        if b <= a:
            raise ValueError("timestamps must be strictly increasing")
    out = []
    t = ts[0]
    j = 0
    while t <= ts[-1] + 1e-9:
        while j + 1 < len(ts) - 1 and ts[j + 1] <= t:
            j += 1
        t0, x0, y0, a0 = rows[j]
        t1, x1, y1, a1 = rows[j + 1]
        u = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        out.append((t,
                    x0 + u * (x1 - x0),
                    y0 + u * (y1 - y0),
                    wrap_angle(a0 + u * wrap_angle(a1 - a0))))
        t += dt
    return out


def write_trajectory_csv(path, rows: Iterable[tuple[float, float, float, float]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "x", "y", "alpha"])
        for t, x, y, a in rows:
            w.writerow([repr(t), repr(x), repr(y), repr(a)])


def read_trajectory_csv(path) -> list[tuple[float, float, float, float]]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if header != ["t", "x", "y", "alpha"]:
            raise ValueError(f"unexpected trajectory header: {header}")
        return [(float(t), float(x), float(y), float(a)) for t, x, y, a in r]
