"""Navigation reward, sampling MPC over the learned dynamics, the static
distance-triggered instruction policy, and the closed-loop guidance episode.

The planner scores candidate instruction sequences by rolling each one
through the walker-dynamics model and summing the navigation reward along
the predicted trajectory; the episode loop couples that planner to a
simulated walker, a noisy localizer, and periodic model adaptation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Callable, Sequence

import numpy as np

from .dynamics import (
    ExpertsModel,
    RolloutResult,
    StartBatch,
    finetune_step,
    pack_input,
    rollout_batch,
    update_weights,
)
from .statespace import (
    DT,
    Action,
    ActionType,
    Amount,
    Direction,
    FORWARD,
    FullState,
    HumanState,
    ReparamContext,
    ReparamState,
    Transition,
    encode_action,
    reparameterize_step,
    valid_actions,
    wrap_angle,
)
from .walkersim import (
    LocalizerConfig,
    ParticleFilterTracker,
    WalkerProfile,
    initial_state,
    localize,
    step_walker,
)
from .world import (
    FloorPlan,
    Path,
    SurroundState,
    Waypoint,
    _cumlen,
    distance_to_path,
    generate_waypoints,
    occupancy_features_batch,
    plan_path,
    project_to_path,
)

# static-policy distance triggers, meters along the path
APPROACH_TRIGGER = 5.0
TURN_TRIGGER = 1.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    r_step: float = -1.0             # per-step penalty while on the path
    on_path_threshold: float = 1.5   # meters from the path polyline
    r_off: float = -2.0              # harsher penalty once off the path
    waypoint_radius: float = 1.5
    heading_tol: float = math.pi / 6

    def __post_init__(self):
        if not self.r_off < self.r_step < 0:
            raise ConfigError("need r_off < r_step < 0")
        if self.waypoint_radius <= 0 or self.on_path_threshold <= 0:
            raise ConfigError("distance thresholds must be positive")

    def to_dict(self) -> dict:
        return {"r_step": self.r_step,
                "on_path_threshold": self.on_path_threshold,
                "r_off": self.r_off, "waypoint_radius": self.waypoint_radius,
                "heading_tol": self.heading_tol}

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 40                # L steps of 0.5 s
    n_candidates: int = 64           # K sampled instruction sequences
    gamma: float = 1.0               # undiscounted scoring
    replan_every_step: bool = True
    offpath_replan_threshold: float = 3.0
    p_mut: float = 0.15              # per-slot mutation probability
    rate_limit_s: float = 2.0        # minimum gap between spoken instructions
    turn_hold_s: float = 3.5         # grace before contradicting a spoken turn
    update_period_s: float = 30.0    # adaptation batch length

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.n_candidates < 1:
            raise ConfigError("need at least one candidate")
        if not 0.0 <= self.p_mut <= 1.0:
            raise ConfigError("p_mut must be a probability")

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "n_candidates": self.n_candidates,
                "gamma": self.gamma,
                "replan_every_step": self.replan_every_step,
                "offpath_replan_threshold": self.offpath_replan_threshold,
                "p_mut": self.p_mut, "rate_limit_s": self.rate_limit_s,
                "turn_hold_s": self.turn_hold_s,
                "update_period_s": self.update_period_s}

    @classmethod
    def from_dict(cls, d: dict) -> "PlanConfig":
        kw = dict(d)
        kw["horizon"] = int(kw["horizon"])
        kw["n_candidates"] = int(kw["n_candidates"])
        kw["replan_every_step"] = bool(kw["replan_every_step"])
        return cls(**kw)


@dataclass(frozen=True)
class InstructionPlan:
    actions: tuple[Action, ...]
    score: float
    rollout: RolloutResult | None = None

    def __post_init__(self):
        if not self.actions:
            raise ConfigError("a plan needs at least one action")


def reward(s: FullState, path: Path, waypoints: Sequence[Waypoint],
           cfg: RewardConfig, wp_index: int = 0) -> tuple[float, int]:
    """Per-step navigation reward; returns (reward, next waypoint index).

    Reaching the next waypoint (inside the radius with an acceptable
    heading) earns 0 and consumes it; otherwise each step costs r_step on
    the path and r_off beyond the threshold.
    """
    pose = s.human
    if wp_index < len(waypoints):
        wp = waypoints[wp_index]
        near = math.hypot(pose.x - wp.x, pose.y - wp.y) <= cfg.waypoint_radius
        aligned = abs(wrap_angle(pose.alpha - wp.alpha_w)) <= cfg.heading_tol
        if near and aligned:
            return 0.0, wp_index + 1
    d = distance_to_path((pose.x, pose.y), path)
    return (cfg.r_step if d <= cfg.on_path_threshold else cfg.r_off), wp_index


def generate_candidates(current: Sequence[Action] | None, cfg: PlanConfig,
                        rng: np.random.Generator) -> list[tuple[Action, ...]]:
    """Candidate instruction sequences: the previous plan shifted one step,
    point mutations of it, and fresh uniform sequences."""
    vocab = valid_actions()
    L, K = cfg.horizon, cfg.n_candidates
    if current is not None:
        base = tuple(current[1:]) + (FORWARD,)
    else:
        base = (FORWARD,) * L
    out = [base]
    while len(out) < K:
        if len(out) % 2 == 1:
            mutated = list(base)
            hits = np.nonzero(rng.random(L) < cfg.p_mut)[0]
            for i in hits:
                mutated[i] = vocab[int(rng.integers(len(vocab)))]
            out.append(tuple(mutated))
        else:
            idx = rng.integers(0, len(vocab), L)
            out.append(tuple(vocab[int(i)] for i in idx))
    return out


def _tile_state(state, k: int):
    """Broadcast a batch-1 model state to k rows (model states are nested
    tuples/lists/dicts of arrays)."""
    if state is None:
        return None
    if isinstance(state, np.ndarray):
        return np.repeat(state, k, axis=0)
    if isinstance(state, tuple):
        return tuple(_tile_state(s, k) for s in state)
    if isinstance(state, list):
        return [_tile_state(s, k) for s in state]
    if isinstance(state, dict):
        return {key: _tile_state(v, k) for key, v in state.items()}
    return state


def _score_rows(rb, path: Path, waypoints: Sequence[Waypoint],
                reward_cfg: RewardConfig, gamma: float,
                wp_start: int) -> np.ndarray:
    B, H = rb.x.shape
    scores = np.empty(B)
    for b in range(B):
        wp = wp_start
        total = 0.0
        g = 1.0
        for k in range(H):
            pose = HumanState(rb.x[b, k], rb.y[b, k], rb.alpha[b, k])
            r, wp = reward(FullState(pose, _EMPTY_SURROUND), path, waypoints,
                           reward_cfg, wp)
            total += g * r
            g *= gamma
        scores[b] = total
    return scores


_EMPTY_SURROUND = SurroundState(np.zeros(24), np.zeros(96))


def score_candidates(model, s_t: FullState, s_hat: ReparamState,
                     candidates: Sequence[Sequence[Action]], path: Path,
                     waypoints: Sequence[Waypoint], floor: FloorPlan,
                     cfg: PlanConfig, reward_cfg: RewardConfig,
                     hidden=None, ctx: ReparamContext | None = None,
                     wp_start: int = 0):
    """Roll out every candidate in one batch and score each trajectory."""
    K = len(candidates)
    h = s_t.human
    beta = ctx.beta_prev if ctx is not None else h.alpha
    start = StartBatch(np.full(K, h.x), np.full(K, h.y), np.full(K, h.alpha),
                       np.full(K, beta), np.tile(s_hat.as_array(), (K, 1)))
    enc = np.stack([[encode_action(a) for a in cand] for cand in candidates])
    # score what the world would let the walker do, not the raw intent:
    # predicted displacement stops at walls just like the real walker does
    rb = rollout_batch(model, start, enc, floor,
                       hidden=_tile_state(hidden, K), project=True)
    scores = _score_rows(rb, path, waypoints, reward_cfg, cfg.gamma, wp_start)
    return scores, rb


def mpc_plan(model, s_t: FullState, s_hat: ReparamState, path: Path,
             waypoints: Sequence[Waypoint], floor: FloorPlan, cfg: PlanConfig,
             reward_cfg: RewardConfig, rng: np.random.Generator,
             prev_plan: InstructionPlan | None = None, hidden=None,
             ctx: ReparamContext | None = None,
             wp_start: int = 0) -> InstructionPlan:
    """Sampling MPC: generate candidates, roll each through the model,
    return the highest-scoring plan (ties break to the lowest index)."""
    cands = generate_candidates(
        prev_plan.actions if prev_plan is not None else None, cfg, rng)
    scores, rb = score_candidates(model, s_t, s_hat, cands, path, waypoints,
                                  floor, cfg, reward_cfg, hidden=hidden,
                                  ctx=ctx, wp_start=wp_start)
    best = int(np.argmax(scores))
    H = len(cands[best])
    result = RolloutResult(
        [ReparamState.from_array(rb.s_hat[best, k]) for k in range(H)],
        [HumanState(rb.x[best, k], rb.y[best, k], rb.alpha[best, k])
         for k in range(H)],
        [SurroundState(rb.o[best, k], rb.l[best, k]) for k in range(H)],
        bool(rb.left_bounds[best]), None,
        ReparamContext(float(rb.beta[best]), DT))
    return InstructionPlan(cands[best], float(scores[best]), result)


# ---- static baseline policy ----


def _turn_vertices(path: Path) -> list[tuple[float, float]]:
    """(arc position, signed turn angle) for every bend sharper than 30 deg."""
    pts = path.polyline
    if len(pts) < 3:
        return []
    cum = _cumlen(pts)
    out = []
    for i in range(1, len(pts) - 1):
        (xa, ya), (xb, yb), (xc, yc) = pts[i - 1], pts[i], pts[i + 1]
        h_in = math.atan2(yb - ya, xb - xa)
        h_out = math.atan2(yc - yb, xc - xb)
        ang = wrap_angle(h_out - h_in)
        if abs(ang) >= math.pi / 6:
            out.append((float(cum[i]), ang))
    return out


def _turn_action(angle: float, approaching: bool) -> Action:
    d = Direction.LEFT if angle > 0 else Direction.RIGHT
    deg = abs(math.degrees(angle))
    if deg >= 67.5:
        kind, amount = ActionType.TURN, Amount.FULL
    elif deg >= 37.5:
        kind, amount = ActionType.DIAGONAL_TURN, Amount.DIAGONAL
    else:
        kind, amount = ActionType.SLIGHT_TURN, Amount.SLIGHT
    if approaching:
        return Action(ActionType.APPROACHING_TURN, d, amount)
    return Action(kind, d, amount)


def static_policy(s: FullState, path: Path,
                  waypoints: Sequence[Waypoint] = (),
                  wp_index: int = 0) -> Action:
    """Distance-triggered instruction rules with no user model.

    Obstacle warnings take priority; otherwise announce an upcoming bend at
    5 m, command the turn within 1 m of the vertex, and default to walking
    straight on.
    """
    o = s.surround.o
    for bin_idx, d in ((0, Direction.NONE), (3, Direction.LEFT),
                       (21, Direction.RIGHT)):
        if o[bin_idx]:
            return Action(ActionType.OBSTACLE, d)
    _, arc = project_to_path((s.human.x, s.human.y), path)
    for v_arc, ang in _turn_vertices(path):
        d = v_arc - arc
        if d < -TURN_TRIGGER:
            continue
        if d <= TURN_TRIGGER:
            return _turn_action(ang, approaching=False)
        if d <= APPROACH_TRIGGER:
            return _turn_action(ang, approaching=True)
        break
    return FORWARD


# ---- closed-loop episode ----


@dataclass
class EpisodeRow:
    t: float
    x: float
    y: float
    alpha: float
    est_x: float
    est_y: float
    est_alpha: float
    a_type: str
    a_dir: str
    a_amount: str
    reward: float
    wp_index: int
    replan: int


CSV_FIELDS = ["t", "x", "y", "alpha", "est_x", "est_y", "est_alpha",
              "a_type", "a_dir", "a_amount", "reward", "wp_index", "replan"]


@dataclass
class Episode:
    rows: list[EpisodeRow] = field(default_factory=list)
    reached_goal: bool = False
    duration_s: float = 0.0
    cum_reward: float = 0.0
    replan_count: int = 0
    update_count: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for r in self.rows:
                w.writerow([repr(r.t), repr(r.x), repr(r.y), repr(r.alpha),
                            repr(r.est_x), repr(r.est_y), repr(r.est_alpha),
                            r.a_type, r.a_dir, r.a_amount, repr(r.reward),
                            r.wp_index, r.replan])

    @staticmethod
    def read_csv(path) -> list[EpisodeRow]:
        out = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                out.append(EpisodeRow(
                    float(rec["t"]), float(rec["x"]), float(rec["y"]),
                    float(rec["alpha"]), float(rec["est_x"]),
                    float(rec["est_y"]), float(rec["est_alpha"]),
                    rec["a_type"], rec["a_dir"], rec["a_amount"],
                    float(rec["reward"]), int(rec["wp_index"]),
                    int(rec["replan"])))
        return out


def _nearest_node(floor: FloorPlan, x: float, y: float) -> int:
    best, best_d = None, math.inf
    for nid, nx, ny in floor.graph.nodes:
        d = math.hypot(nx - x, ny - y)
        if d < best_d:
            best, best_d = nid, d
    return best


def _default_update_fn(model) -> Callable:
    if isinstance(model, ExpertsModel):
        return update_weights
    return finetune_step


def ping_loop(floor: FloorPlan, start_node: int, goal_node: int, model,
              profile: WalkerProfile, rng: np.random.Generator,
              reward_cfg: RewardConfig | None = None,
              plan_cfg: PlanConfig | None = None,
              loc_cfg: LocalizerConfig | None = None,
              update_fn: Callable | None = None,
              timeout_s: float = 180.0) -> Episode:
    """Run one guided episode from a graph node to a goal node.

    Each 0.5 s tick: observe the walker through the localizer and particle
    filter, compute surroundings and the estimated motion state, collect
    the transition, pick an instruction (static rules for the first
    adaptation batch or when no model is given, sampling MPC afterwards),
    and deliver it subject to the rate limit. Every update period the
    buffered transitions adapt the model. Drifting past the off-path
    threshold triggers a global replan. The episode ends when the goal
    waypoint is consumed or the timeout elapses.
    """
    reward_cfg = reward_cfg or RewardConfig()
    plan_cfg = plan_cfg or PlanConfig()
    loc_cfg = loc_cfg or LocalizerConfig()
    if update_fn is None and model is not None:
        update_fn = _default_update_fn(model)

    path = plan_path(floor.graph, start_node, goal_node)
    waypoints = generate_waypoints(path, floor)
    goal_wp = waypoints[-1] if waypoints else None
    sx, sy = floor.graph.node_pos(start_node)
    if len(path.polyline) > 1:
        (x0, y0), (x1, y1) = path.polyline[0], path.polyline[1]
        alpha0 = math.atan2(y1 - y0, x1 - x0)
    else:
        alpha0 = 0.0
    walker = initial_state(sx, sy, alpha0, rng)
    tracker = ParticleFilterTracker(loc_cfg, rng)
    ex, ey = floor.extent

    hidden = model.init_state(1) if model is not None else None
    episode = Episode()
    batch: list[Transition] = []
    prev_est: HumanState | None = None
    ctx: ReparamContext | None = None
    s_hat = ReparamState(0.0, 0.0, 0.0)
    pending: tuple | None = None
    prev_plan: InstructionPlan | None = None
    wp_index = 0
    last_deliver_t = -math.inf
    last_turn_t = -math.inf
    current_instruction: Action | None = None
    updates_done = 0
    ticks_per_update = max(1, int(round(plan_cfg.update_period_s / DT)))
    n_ticks = int(round(timeout_s / DT))

    for tick in range(n_ticks):
        t = tick * DT
        truth = walker.pose()
        obs = localize(truth, loc_cfg, rng)
        est = tracker.update(obs)
        cx = min(max(est.x, 0.0), ex * (1 - 1e-9))
        cy = min(max(est.y, 0.0), ey * (1 - 1e-9))
        est_pose = HumanState(cx, cy, est.alpha)
        o, l = occupancy_features_batch(floor, np.array([cx]), np.array([cy]),
                                        np.array([est_pose.alpha]))
        surround = SurroundState(o[0], l[0])
        full = FullState(est_pose, surround)

        if prev_est is not None:
            s_hat, ctx = reparameterize_step(prev_est, est_pose, ctx)
        prev_est = est_pose

        if pending is not None:
            p_hat, p_sur, p_act = pending
            batch.append(Transition(p_hat, p_sur, encode_action(p_act), s_hat))
        replan_flag = 0
        if distance_to_path((est_pose.x, est_pose.y), path) \
                > plan_cfg.offpath_replan_threshold:
            path = plan_path(floor.graph,
                             _nearest_node(floor, est_pose.x, est_pose.y),
                             goal_node)
            waypoints = generate_waypoints(path, floor)
            if not waypoints and goal_wp is not None:
                # replanning right next to the goal node degenerates the
                # path; arrival still has to happen at the goal waypoint
                waypoints = [goal_wp]
            # resume at the first waypoint still ahead; steering back to
            # ones already passed would walk the route backwards
            _, arc = project_to_path((est_pose.x, est_pose.y), path)
            wp_index = 0
            while wp_index < len(waypoints) - 1 and project_to_path(
                    (waypoints[wp_index].x, waypoints[wp_index].y),
                    path)[1] <= arc:
                wp_index += 1
            prev_plan = None
            episode.replan_count += 1
            replan_flag = 1

        r, wp_index = reward(full, path, waypoints, reward_cfg, wp_index)
        episode.cum_reward += r
        reached = wp_index >= len(waypoints)

        if model is None or updates_done == 0:
            action = static_policy(full, path, waypoints, wp_index)
        else:
            prev_plan = mpc_plan(model, full, s_hat, path, waypoints, floor,
                                 plan_cfg, reward_cfg, rng,
                                 prev_plan=prev_plan, hidden=hidden, ctx=ctx,
                                 wp_start=wp_index)
            action = prev_plan.actions[0]

        delivered: list[Action] = []
        if action != current_instruction \
                and t - last_deliver_t >= plan_cfg.rate_limit_s \
                and not (action.is_turn()
                         and t - last_turn_t < plan_cfg.turn_hold_s):
            # a fresh turn replaces one the walker may not have started,
            # so a just-spoken turn gets a grace period first
            delivered = [action]
            current_instruction = action
            last_deliver_t = t
            if action.is_turn():
                last_turn_t = t

        act_ctx = current_instruction if current_instruction is not None \
            else FORWARD
        episode.rows.append(EpisodeRow(
            t, truth.x, truth.y, truth.alpha, est.x, est.y, est.alpha,
            act_ctx.a_type.name, act_ctx.a_dir.name, act_ctx.a_amount.name,
            r, wp_index, replan_flag))
        if reached:
            episode.reached_goal = True
            episode.duration_s = t
            break

        pending = (s_hat, surround, act_ctx)
        if model is not None:
            xin = pack_input(s_hat, surround, act_ctx)
            _, hidden = model.step(xin[None], hidden)

        walker = step_walker(walker, profile, delivered, DT, floor, rng)

        if model is not None and tick > 0 and tick % ticks_per_update == 0 \
                and batch:
            update_fn(model, batch)
            batch = []
            updates_done += 1
            episode.update_count = updates_done
    else:
        episode.duration_s = n_ticks * DT

    return episode


def save_configs(path, reward_cfg: RewardConfig, plan_cfg: PlanConfig) -> None:
    FsPath(path).write_text(json.dumps(
        {"reward": reward_cfg.to_dict(), "plan": plan_cfg.to_dict()}, indent=2))


def load_configs(path) -> tuple[RewardConfig, PlanConfig]:
    d = json.loads(FsPath(path).read_text())
    return RewardConfig.from_dict(d["reward"]), PlanConfig.from_dict(d["plan"])
