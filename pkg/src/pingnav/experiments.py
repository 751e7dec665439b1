"""Experiment runners: scripted walker streams, source-model pretraining,
the online-adaptation study, and the guided-navigation benchmark.

The adaptation study follows a fixed protocol: a new walker produces two
separate recordings (an adaptation stream and a test stream that never
changes); the model under test is evaluated on the test stream before any
update and again after consuming each 30 s batch of the adaptation stream.
Evaluation rolls the model forward from every anchor point of the test
stream, replaying the instructions that were actually given, and measures
end-point and average displacement at 5/10/20 s.
"""

from __future__ import annotations

import copy
import functools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dynamics import (
    ExpertsModel,
    LinearRegressor,
    MultiHeadModel,
    StartBatch,
    UPDATE_EPOCHS,
    finetune_step,
    person_spec,
    pretrain,
    rollout_batch,
    transitions_to_arrays,
    update_weights,
)
from .metrics import (
    HORIZONS_S,
    SCHEMES,
    AdaptationCurve,
    CurvePoint,
    NavMetrics,
    PredictionEval,
    _mean_sd,
)
from .neural import NetSpec, Network
from .planner import Episode, PlanConfig, RewardConfig, ping_loop
from .statespace import (
    DT,
    Action,
    ActionType,
    Amount,
    Direction,
    FORWARD,
    Transition,
    encode_action,
    reparameterize_trajectory,
    wrap_angle,
)
from .walkersim import (
    LocalizerConfig,
    PopulationSpec,
    WalkerProfile,
    initial_state,
    sample_profile,
    step_walker,
)
from .world import (
    FloorPlan,
    NavGraph,
    SurroundState,
    distance_to_path,
    load_map,
    occupancy_features_batch,
    plan_path,
)

TURN_CHOICES = (
    Action(ActionType.TURN, Direction.LEFT, Amount.FULL),
    Action(ActionType.TURN, Direction.RIGHT, Amount.FULL),
)
DIAGONAL_CHOICES = (
    Action(ActionType.DIAGONAL_TURN, Direction.LEFT, Amount.DIAGONAL),
    Action(ActionType.DIAGONAL_TURN, Direction.RIGHT, Amount.DIAGONAL),
)
SLIGHT_CHOICES = (
    Action(ActionType.SLIGHT_TURN, Direction.LEFT, Amount.SLIGHT),
    Action(ActionType.SLIGHT_TURN, Direction.RIGHT, Amount.SLIGHT),
)


# ---- scripted free-walk streams ----


@functools.lru_cache(maxsize=8)
def make_arena(size_m: float = 40.0, resolution: float = 0.5) -> FloorPlan:
    """Square walled room with a trivial two-node graph, for free walking."""
    n = int(round(size_m / resolution))
    occ = np.zeros((n, n), dtype=bool)
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    c = size_m / 2.0
    graph = NavGraph(((0, c, c), (1, c + 2.0, c)), ((0, 1),))
    return FloorPlan(resolution, n, n, occ, (), graph)


@dataclass(frozen=True)
class StreamConfig:
    duration_s: float = 480.0
    instr_period_s: float = 5.0   # mean spacing between instructions
    turn_prob: float = 0.35
    diagonal_prob: float = 0.10
    slight_prob: float = 0.10
    arena_m: float = 40.0


@dataclass
class WalkStream:
    """A recorded free walk, shaped for one-step training and rollout eval.

    Row j holds transition j: the motion arriving at pose j, surroundings
    and instruction there, and the observed next motion.  xy/alpha/beta are
    the pose and direction carry at that transition, so rollouts can start
    exactly where the model's input window ends.
    """

    transitions: list[Transition]
    xy: np.ndarray           # (M, 2)
    alpha: np.ndarray        # (M,)
    beta: np.ndarray         # (M,)
    s_hat_in: np.ndarray     # (M, 3)
    action_vecs: np.ndarray  # (M, action-width)
    deliveries: tuple        # ((t, Action), ...) as spoken
    floor: FloorPlan

    def __len__(self) -> int:
        return len(self.transitions)


def _pick_instruction(x: float, y: float, alpha: float, floor: FloorPlan,
                      cfg: StreamConfig, rng: np.random.Generator) -> Action:
    # steer back toward the room center when heading out, otherwise wander
    ex, ey = floor.extent
    off = wrap_angle(math.atan2(ey / 2 - y, ex / 2 - x) - alpha)
    r = math.hypot(x - ex / 2, y - ey / 2)
    if r > 0.3 * min(ex, ey) and abs(off) > math.pi / 3:
        side = 0 if off > 0 else 1
        if abs(off) > math.radians(67.5):
            return TURN_CHOICES[side]
        return DIAGONAL_CHOICES[side]
    u = rng.random()
    side = int(rng.integers(2))
    if u < cfg.turn_prob:
        return TURN_CHOICES[side]
    if u < cfg.turn_prob + cfg.diagonal_prob:
        return DIAGONAL_CHOICES[side]
    if u < cfg.turn_prob + cfg.diagonal_prob + cfg.slight_prob:
        return SLIGHT_CHOICES[side]
    return FORWARD


def scripted_stream(profile: WalkerProfile, cfg: StreamConfig,
                    rng: np.random.Generator,
                    floor: FloorPlan | None = None) -> WalkStream:
    """Walk one simulated user around an arena under scripted instructions.

    Instructions arrive at jittered intervals; each tick is recorded with
    the most recently spoken instruction as its action context, mirroring
    what the online agent knows at prediction time.
    """
    floor = floor if floor is not None else make_arena(cfg.arena_m)
    ex, ey = floor.extent
    n = int(round(cfg.duration_s / DT))
    if n < 3:
        raise ValueError("stream too short to produce transitions")
    a0 = rng.uniform(-math.pi, math.pi)
    ws = initial_state(ex / 2, ey / 2, a0, rng)
    poses = [ws.pose()]
    act_eff: list[Action] = []
    deliveries: list[tuple[float, Action]] = []
    current = FORWARD
    next_instr = 0.0
    for k in range(n):
        t = k * DT
        delivered: list[Action] = []
        if t >= next_instr:
            a = _pick_instruction(ws.x, ws.y, ws.alpha, floor, cfg, rng) \
                if k else FORWARD
            delivered = [a]
            deliveries.append((t, a))
            current = a
            next_instr = t + cfg.instr_period_s * (0.75 + 0.5 * rng.random())
        act_eff.append(current)
        ws = step_walker(ws, profile, delivered, DT, floor, rng)
        poses.append(ws.pose())

    states, ctxs = reparameterize_trajectory(poses)
    m = len(states) - 1  # transitions
    px = np.array([p.x for p in poses[1:-1]])
    py = np.array([p.y for p in poses[1:-1]])
    pa = np.array([p.alpha for p in poses[1:-1]])
    o, l = occupancy_features_batch(floor, px, py, pa)
    action_vecs = np.stack([encode_action(act_eff[j + 1]) for j in range(m)])
    transitions = [
        Transition(states[j], SurroundState(o[j], l[j]), action_vecs[j],
                   states[j + 1])
        for j in range(m)]
    return WalkStream(
        transitions=transitions,
        xy=np.column_stack([px, py]),
        alpha=pa,
        beta=np.array([c.beta_prev for c in ctxs[:m]]),
        s_hat_in=np.stack([s.as_array() for s in states[:m]]),
        action_vecs=action_vecs,
        deliveries=tuple(deliveries),
        floor=floor)


# ---- source users and pretraining ----


def source_profiles() -> dict[str, WalkerProfile]:
    """Eight walkers on a slow/fast x cautious/confident x bias-side grid.

    Each cell's representative sits near the middle of its half of the
    population ranges, so the bank as a whole tiles the space new walkers
    are sampled from.  Turn rate follows the same span arithmetic the
    population sampler uses.
    """
    out: dict[str, WalkerProfile] = {}
    for speed_tag, speed in (("slow", 0.9), ("fast", 1.3)):
        for care_tag, (react, span, tsf, veer, ack) in (
                ("cautious", (2.1, 4.6, 0.45, 0.045, 1.5)),
                ("confident", (0.7, 2.7, 0.75, 0.015, 0.5))):
            for side_tag, bias in (("left", 0.08), ("right", -0.08)):
                out[f"{speed_tag}-{care_tag}-{side_tag}"] = WalkerProfile(
                    base_speed=speed, reaction_time=react,
                    turn_speed_factor=tsf,
                    turn_rate=(math.pi / 2) / (span - react),
                    veer_rate=veer, overturn_bias=bias,
                    heading_ack_delay=ack)
    return out


@dataclass
class PretrainedBank:
    """All source-user models one adaptation scheme might start from."""

    experts: dict[str, Network]
    agnostic: Network
    multihead: MultiHeadModel
    manifest: dict


# pretraining schedules: decaying step sizes with noise-augmented inputs
# give experts that stay stable when rollouts feed back their own output
EXPERT_STAGES = ((3e-2, 200), (1e-2, 200), (3e-3, 120), (1e-3, 80))
POOLED_STAGES = ((3e-2, 60), (1e-2, 60), (3e-3, 40), (1e-3, 20))
PRETRAIN_WINDOW = 30


def build_bank(seed: int, stream_cfg: StreamConfig | None = None,
               duration_s: float = 600.0,
               expert_spec: NetSpec | None = None,
               agnostic_spec_: NetSpec | None = None,
               expert_stages: Sequence = EXPERT_STAGES,
               pooled_stages: Sequence = POOLED_STAGES,
               window: int = PRETRAIN_WINDOW) -> PretrainedBank:
    """Simulate the source users and pretrain every model family on them."""
    cfg = replace(stream_cfg or StreamConfig(), duration_s=duration_s)
    profiles = source_profiles()
    datasets = {}
    for i, (u, prof) in enumerate(sorted(profiles.items())):
        srng = np.random.default_rng([seed, 1000 + i])
        datasets[u] = scripted_stream(prof, cfg, srng).transitions
    experts = pretrain("experts", datasets, np.random.default_rng([seed, 1]),
                       spec=expert_spec, window=window, stages=expert_stages,
                       noise_copies=2)
    # generic models get breadth from eight users, so each stream only
    # contributes its first half; this keeps the pooled pass affordable
    pooled = {u: tr[:len(tr) // 2] for u, tr in datasets.items()}
    agnostic = pretrain("agnostic", pooled, np.random.default_rng([seed, 2]),
                        spec=agnostic_spec_, window=window,
                        stages=pooled_stages, noise_copies=1)
    multihead = pretrain("multihead", pooled, np.random.default_rng([seed, 3]),
                         spec=agnostic_spec_, window=window,
                         stages=pooled_stages, noise_copies=1)
    manifest = {"seed": seed, "users": sorted(datasets),
                "expert_stages": [list(s) for s in expert_stages],
                "pooled_stages": [list(s) for s in pooled_stages],
                "window": window, "stream_s": duration_s}
    return PretrainedBank(experts, agnostic, multihead, manifest)


def save_full_bank(directory, bank: PretrainedBank) -> None:
    from .dynamics import save_bank
    import json as _json
    import pathlib
    d = pathlib.Path(directory)
    save_bank(d, bank.experts, bank.manifest.get("seed", 0))
    bank.agnostic.save(d / "agnostic.model.json")
    bank.multihead.save(d / "multihead.model.json")
    (d / "pretrain.json").write_text(_json.dumps(bank.manifest, indent=1))


def load_full_bank(directory) -> PretrainedBank:
    from .dynamics import load_bank
    import json as _json
    import pathlib
    d = pathlib.Path(directory)
    experts, manifest = load_bank(d)
    agnostic = Network.load(d / "agnostic.model.json")
    multihead = MultiHeadModel.load(d / "multihead.model.json")
    extra = _json.loads((d / "pretrain.json").read_text())
    return PretrainedBank(experts, agnostic, multihead, {**manifest, **extra})


# ---- rollout evaluation over a test stream ----


@dataclass(frozen=True)
class EvalConfig:
    horizons_s: tuple = HORIZONS_S
    anchor_stride: int = 4
    turn_window_s: float = 10.0


def _stack_hidden(states: Sequence):
    """Stack per-anchor model states along the batch axis, preserving the
    nesting a model uses for its hidden state."""
    first = states[0]
    if first is None:
        return None
    if isinstance(first, np.ndarray):
        return np.concatenate(states, axis=0)
    return type(first)(_stack_hidden([s[i] for s in states])
                       for i in range(len(first)))


def anchor_indices(stream: WalkStream, cfg: EvalConfig) -> np.ndarray:
    h = round(max(cfg.horizons_s) / DT)
    last = len(stream) - h
    if last <= 0:
        raise ValueError("test stream shorter than the longest horizon")
    return np.arange(0, last, cfg.anchor_stride)


def turn_anchor_mask(stream: WalkStream, anchors: np.ndarray,
                     window_s: float = 10.0) -> np.ndarray:
    """Anchors whose tick falls within window_s before a spoken turn."""
    times = (anchors + 1) * DT
    mask = np.zeros(len(anchors), dtype=bool)
    for t, a in stream.deliveries:
        if a.a_type is ActionType.TURN:
            mask |= (times >= t - window_s) & (times <= t)
    return mask


def evaluate_prediction(model, stream: WalkStream,
                        cfg: EvalConfig | None = None) -> list[PredictionEval]:
    """Closed-loop rollout errors from every anchor of a fixed test stream.

    The model is first run teacher-forced along the stream so each anchor
    starts from the hidden state it would have had online; rollouts then
    feed back their own predictions while replaying the logged instructions.
    """
    cfg = cfg or EvalConfig()
    anchors = anchor_indices(stream, cfg)
    h = round(max(cfg.horizons_s) / DT)
    xs, _ = transitions_to_arrays(stream.transitions)

    rec = {}
    hidden = model.init_state(1)
    last_needed = int(anchors.max())
    for i in range(last_needed + 1):
        rec[i] = hidden
        if i == last_needed:
            break
        _, hidden = model.step(xs[i][None], hidden)
    hidden0 = _stack_hidden([rec[int(j)] for j in anchors])

    start = StartBatch(stream.xy[anchors, 0].copy(), stream.xy[anchors, 1].copy(),
                       stream.alpha[anchors].copy(), stream.beta[anchors].copy(),
                       stream.s_hat_in[anchors].copy())
    acts = np.stack([stream.action_vecs[j:j + h] for j in anchors])
    rb = rollout_batch(model, start, acts, stream.floor, hidden=hidden0)

    idx = anchors[:, None] + 1 + np.arange(h)[None, :]
    tx = stream.xy[idx, 0]
    ty = stream.xy[idx, 1]
    d = np.hypot(rb.x - tx, rb.y - ty)

    mask = turn_anchor_mask(stream, anchors, cfg.turn_window_s)
    out = []
    for t_s in cfg.horizons_s:
        n = round(t_s / DT)
        epe_v = d[:, n - 1]
        ade_v = d[:, :n].mean(axis=1)
        out.append(PredictionEval(t_s, epe_v, ade_v, "all"))
        out.append(PredictionEval(t_s, epe_v[mask], ade_v[mask], "turn"))
    return out


# ---- the adaptation study ----


@dataclass(frozen=True)
class AdaptConfig:
    batch_s: float = 30.0
    adapt_duration_s: float = 480.0
    test_duration_s: float = 600.0
    update_epochs: int = UPDATE_EPOCHS
    eval: EvalConfig = field(default_factory=EvalConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)

    def to_dict(self) -> dict:
        return {"batch_s": self.batch_s,
                "adapt_duration_s": self.adapt_duration_s,
                "test_duration_s": self.test_duration_s,
                "update_epochs": self.update_epochs,
                "anchor_stride": self.eval.anchor_stride,
                "horizons_s": list(self.eval.horizons_s),
                "turn_window_s": self.eval.turn_window_s,
                "instr_period_s": self.stream.instr_period_s,
                "arena_m": self.stream.arena_m}


def scheme_model(scheme: str, bank: PretrainedBank | None,
                 rng: np.random.Generator):
    """Fresh model instance for one adaptation scheme; pretrained weights
    are deep-copied so runs never share mutable state."""
    if scheme == "scratch":
        return Network(person_spec(), rng)
    if bank is None:
        raise ValueError(f"scheme {scheme!r} needs a pretrained bank")
    if scheme == "finetune":
        return copy.deepcopy(bank.agnostic)
    if scheme == "finetune-mh":
        mh = bank.multihead.clone()
        mh.add_head("newcomer", rng)
        return mh
    if scheme in ("experts", "experts-ns"):
        members = [bank.experts[u] for u in sorted(bank.experts)]
        return ExpertsModel(members, rng,
                            include_newcomer=(scheme == "experts"))
    raise ValueError(f"unknown scheme {scheme!r}")


# mixture weights and the newcomer tolerate a larger online step than
# whole-network finetuning does; tuned separately per scheme
EXPERTS_UPDATE_ETA = 5e-2


def scheme_update(scheme: str, model, batch: Sequence[Transition],
                  epochs: int = UPDATE_EPOCHS) -> None:
    if scheme in ("experts", "experts-ns"):
        update_weights(model, batch, eta=EXPERTS_UPDATE_ETA, epochs=epochs)
    else:
        for _ in range(epochs):
            finetune_step(model, batch)


def adaptation_experiment(scheme: str, adapt_stream: WalkStream,
                          test_stream: WalkStream, bank: PretrainedBank | None,
                          cfg: AdaptConfig, rng: np.random.Generator
                          ) -> AdaptationCurve:
    """Update one scheme batch-by-batch, scoring it on the fixed test stream
    before the first batch and after each one."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if len(test_stream) == 0:
        raise ValueError("test stream is empty")
    model = scheme_model(scheme, bank, rng)
    batch_len = int(round(cfg.batch_s / DT))
    n_batches = int(cfg.adapt_duration_s // cfg.batch_s)
    if len(adapt_stream) < n_batches * batch_len:
        raise ValueError(
            f"adaptation stream has {len(adapt_stream)} transitions, need "
            f"{n_batches * batch_len} for {n_batches} batches")

    curve = AdaptationCurve(scheme)

    def score(t_s: float) -> None:
        for ev in evaluate_prediction(model, test_stream, cfg.eval):
            me, se = _mean_sd(ev.epe)
            ma, sa = _mean_sd(ev.ade)
            curve.points.append(CurvePoint(t_s, scheme, ev.horizon_s,
                                           me, se, ma, sa, ev.tag))

    score(0.0)
    for b in range(n_batches):
        batch = adapt_stream.transitions[b * batch_len:(b + 1) * batch_len]
        scheme_update(scheme, model, batch, cfg.update_epochs)
        score((b + 1) * cfg.batch_s)
    return curve


def new_walker_streams(population: PopulationSpec, cfg: AdaptConfig, seed: int
                       ) -> tuple[WalkerProfile, WalkStream, WalkStream]:
    """Sample a new walker and record its two disjoint walks."""
    rng = np.random.default_rng([seed, 7])
    profile = sample_profile(rng, population)
    adapt_cfg = replace(cfg.stream, duration_s=cfg.adapt_duration_s + 2.0)
    test_cfg = replace(cfg.stream, duration_s=cfg.test_duration_s)
    adapt_stream = scripted_stream(profile, adapt_cfg,
                                   np.random.default_rng([seed, 8]))
    test_stream = scripted_stream(profile, test_cfg,
                                  np.random.default_rng([seed, 9]))
    return profile, adapt_stream, test_stream


def run_adaptation(schemes: Sequence[str], population: PopulationSpec,
                   bank: PretrainedBank | None, cfg: AdaptConfig, seed: int
                   ) -> list[AdaptationCurve]:
    """One seeded adaptation study: same walker and data for every scheme."""
    _, adapt_stream, test_stream = new_walker_streams(population, cfg, seed)
    out = []
    for k, scheme in enumerate(schemes):
        rng = np.random.default_rng([seed, 100 + k])
        out.append(adaptation_experiment(scheme, adapt_stream, test_stream,
                                         bank, cfg, rng))
    return out


# ---- non-neural baselines on the same anchors ----


def baseline_eval(kind: str, stream: WalkStream, cfg: EvalConfig | None = None,
                  history_len: int = 10,
                  fit_transitions: Sequence[Transition] | None = None
                  ) -> list[PredictionEval]:
    """Score a non-neural predictor at the same anchors the models use."""
    cfg = cfg or EvalConfig()
    anchors = anchor_indices(stream, cfg)
    h = round(max(cfg.horizons_s) / DT)
    if kind == "linear":
        if fit_transitions is None:
            raise ValueError("linear baseline needs transitions to fit")
        lr = LinearRegressor().fit(fit_transitions)
        start = StartBatch(stream.xy[anchors, 0].copy(),
                           stream.xy[anchors, 1].copy(),
                           stream.alpha[anchors].copy(),
                           stream.beta[anchors].copy(),
                           stream.s_hat_in[anchors].copy())
        acts = np.stack([stream.action_vecs[j:j + h] for j in anchors])
        rb = rollout_batch(lr, start, acts, stream.floor)
        px, py = rb.x, rb.y
    else:
        from .dynamics import baseline_predict
        from .statespace import HumanState
        px = np.empty((len(anchors), h))
        py = np.empty((len(anchors), h))
        for b, j in enumerate(anchors):
            lo = max(0, j - history_len + 1)
            hist = [HumanState(stream.xy[i, 0], stream.xy[i, 1],
                               stream.alpha[i]) for i in range(lo, j + 1)]
            if len(hist) < 2:
                hist = [hist[0], hist[0]] if hist else []
            pred = baseline_predict(kind, hist, h)
            px[b] = [p.x for p in pred]
            py[b] = [p.y for p in pred]
    idx = anchors[:, None] + 1 + np.arange(h)[None, :]
    d = np.hypot(px - stream.xy[idx, 0], py - stream.xy[idx, 1])
    mask = turn_anchor_mask(stream, anchors, cfg.turn_window_s)
    out = []
    for t_s in cfg.horizons_s:
        n = round(t_s / DT)
        out.append(PredictionEval(t_s, d[:, n - 1], d[:, :n].mean(axis=1), "all"))
        out.append(PredictionEval(t_s, d[mask, n - 1], d[mask, :n].mean(axis=1),
                                  "turn"))
    return out


# ---- the navigation benchmark ----


# two- and three-leg routes, 20-30 m: long enough that slow and mid-speed
# walkers are still en route when the 30 s warm-up ends, short enough that a
# single bad corner does not dominate the episode
NAV_ROUTES = (("maps/arcade.json", 0, 3),
              ("maps/arcade.json", 1, 4),
              ("maps/arcade.json", 2, 5),
              ("maps/arcade.json", 3, 6),
              ("maps/l_corridor.json", 0, 2),
              ("maps/arcade.json", 0, 2))

# benchmark walker draw: the full spread of timing and turning quirks, with
# veer capped where a 10 m corridor leg stays walkable at all.  Uncorrected
# lateral drift over a leg of length L is about L^2*veer/(2*speed), so
# 0.03 rad/s puts the slowest worst case right at the 2 m corridor
# half-width; beyond that every policy fails the same way (wall contact
# mid-leg) and the benchmark measures nothing.
NAV_POPULATION = PopulationSpec(veer_rate_range=(0.0, 0.03))


@dataclass(frozen=True)
class NavConfig:
    timeout_s: float = 200.0
    deviation_m: float = 1.5
    plan: PlanConfig = field(default_factory=lambda: PlanConfig(
        horizon=20, n_candidates=24))
    reward: RewardConfig = field(default_factory=RewardConfig)
    loc: LocalizerConfig = field(default_factory=LocalizerConfig)
    routes: tuple = NAV_ROUTES

    def to_dict(self) -> dict:
        return {"timeout_s": self.timeout_s, "deviation_m": self.deviation_m,
                "plan": self.plan.to_dict(), "reward": self.reward.to_dict(),
                "routes": [list(r) for r in self.routes]}


def large_deviations(ep: Episode, path, threshold: float = 1.5
                     ) -> tuple[int, float]:
    """Count off-route excursions of the true pose and their total time."""
    count = 0
    dur = 0.0
    prev = False
    for row in ep.rows:
        off = distance_to_path((row.x, row.y), path) > threshold
        if off:
            dur += DT
            if not prev:
                count += 1
        prev = off
    return count, dur


def navigation_experiment(policy: str, population: PopulationSpec,
                          trials: int, seeds: Sequence[int],
                          bank: PretrainedBank | None = None,
                          cfg: NavConfig | None = None,
                          ) -> tuple[NavMetrics, list[Episode]]:
    """Repeated guided episodes over a route rotation and a walker draw.

    Walker profiles are drawn from the seed before any policy-dependent
    randomness, so two policies run with the same seed list face the same
    walkers on the same routes.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if len(seeds) < trials:
        raise ValueError("need one seed per trial")
    cfg = cfg or NavConfig()
    floors: dict[str, FloorPlan] = {}
    episodes: list[Episode] = []
    successes = 0
    total_t = 0.0
    dev_count = 0
    dev_dur = 0.0
    for i in range(trials):
        rng = np.random.default_rng([seeds[i], 11])
        profile = sample_profile(rng, population)
        map_path, a, b = cfg.routes[i % len(cfg.routes)]
        if map_path not in floors:
            floors[map_path] = load_map(map_path)
        floor = floors[map_path]
        model = None if policy == "static" else scheme_model(policy, bank, rng)
        # online updates inside the episode use the same per-scheme step
        # sizes the adaptation harness does
        update = None if model is None \
            else functools.partial(scheme_update, policy)
        ep = ping_loop(floor, a, b, model, profile, rng, cfg.reward, cfg.plan,
                       cfg.loc, update_fn=update, timeout_s=cfg.timeout_s)
        path = plan_path(floor.graph, a, b)
        c, d = large_deviations(ep, path, cfg.deviation_m)
        episodes.append(ep)
        successes += int(ep.reached_goal)
        total_t += ep.duration_s
        dev_count += c
        dev_dur += d
    metrics = NavMetrics(policy, trials, successes, total_t / trials,
                         dev_count, dev_dur)
    return metrics, episodes


# ---- model size search ----


def hyper_search(grid: Sequence[NetSpec], dataset: Sequence[Transition],
                 seed: int, epochs: int = 20, val_frac: float = 0.2,
                 window: int = 60, models: dict[int, object] | None = None
                 ) -> tuple[NetSpec, list[dict]]:
    """Train each candidate spec and keep the best validation MSE.

    Ties break toward the earlier grid entry.  ``models`` may supply a
    ready-made network for a cell (evaluated as-is, no training), which
    also lets callers reuse expensive fits.
    """
    from .dynamics import windows_from_transitions, train_network
    from .neural import mse_loss
    if not grid:
        raise ValueError("empty search grid")
    xs, ts = windows_from_transitions(dataset, window)
    n_val = max(1, int(round(xs.shape[1] * val_frac)))
    if xs.shape[1] - n_val < 1:
        raise ValueError("dataset too small to split")
    xtr, ttr = xs[:, :-n_val], ts[:, :-n_val]
    xv, tv = xs[:, -n_val:], ts[:, -n_val:]
    best_i = 0
    best_loss = math.inf
    rows = []
    for i, spec in enumerate(grid):
        if models is not None and i in models:
            net = models[i]
        else:
            net = Network(spec, np.random.default_rng([seed, i]))
            train_network(net, xtr, ttr, epochs)
        ys, _ = net.forward(xv)
        loss = mse_loss(ys, tv)
        rows.append({"cell": i, "hidden_sizes": str(spec.hidden_sizes),
                     "val_mse": loss})
        if loss < best_loss:
            best_loss = loss
            best_i = i
    return grid[best_i], rows
