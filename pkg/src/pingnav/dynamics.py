"""Walker dynamics models and their training/adaptation rules.

Covers the person-specific recurrent model, the pooled person-agnostic model
(the fine-tuning baseline), its multi-head variant, and the weighted-experts
ensemble whose adaptation touches only the combiner and the newcomer model
while the expert bank stays frozen.  Also multi-step rollouts through the
map (predict, integrate, re-extract surroundings, repeat) and the non-neural
baselines: constant velocity, a Kalman filter, and a linear regressor.

Model objects expose ``init_state(batch)`` and ``step(x, state)`` with x of
shape (B, input); everything downstream (rollouts, the planner, the
evaluation harness) speaks only that protocol.
"""

from __future__ import annotations

import hashlib
import json
import math
import pathlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import neural
from .neural import DenseLayer, LstmLayer, NetSpec, Network
from .statespace import (
    ACTION_VEC_SIZE,
    DT,
    Action,
    FullState,
    HumanState,
    ReparamContext,
    ReparamState,
    Transition,
    encode_action,
    wrap_angle,
)
from .world import (
    SURROUND_VEC_SIZE,
    FloorPlan,
    SurroundState,
    advance_free_batch,
    occupancy_features_batch,
)

INPUT_SIZE = 3 + SURROUND_VEC_SIZE + ACTION_VEC_SIZE

GRAD_CLIP = 5.0
# SGD epochs over each 30 s adaptation batch
UPDATE_EPOCHS = 20

BANK_FORMAT = "pingnav-bank-v1"
MULTIHEAD_FORMAT = "pingnav-multihead-v1"


def person_spec(eta: float = 1e-2, mu: float = 0.9, lam: float = 1e-4) -> NetSpec:
    """Single 50-unit LSTM plus a linear readout to the 3 motion components."""
    return NetSpec(INPUT_SIZE, (50,), 3, eta=eta, mu=mu, lam=lam)


def agnostic_spec(eta: float = 1e-2, mu: float = 0.9, lam: float = 1e-4) -> NetSpec:
    """Two stacked 100-unit LSTM layers; the pooled fine-tuning baseline."""
    return NetSpec(INPUT_SIZE, (100, 100), 3, eta=eta, mu=mu, lam=lam)


def pack_input(s_hat: ReparamState, surround: SurroundState, action) -> np.ndarray:
    a_vec = encode_action(action) if isinstance(action, Action) else np.asarray(action)
    return np.concatenate([s_hat.as_array(), surround.vector(), a_vec])


def transitions_to_arrays(batch: Sequence[Transition]) -> tuple[np.ndarray, np.ndarray]:
    """(T, input) inputs and (T, 3) targets from a transition sequence."""
    xs = np.stack([pack_input(tr.s_hat, tr.surround, tr.action_vec) for tr in batch])
    ts = np.stack([tr.s_hat_next.as_array() for tr in batch])
    return xs, ts


def param_checksum(params: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(str(p.shape).encode())
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


class MultiHeadModel:
    """Shared recurrent trunk with one readout head per pretraining user.

    Fine-tuning for a new user adds a fresh head and trains trunk + that
    head only; the old heads never change.
    """

    def __init__(self, users: Sequence[str], rng: np.random.Generator,
                 spec: NetSpec | None = None):
        if not users:
            raise ValueError("need at least one user head")
        self.spec = spec if spec is not None else agnostic_spec()
        self.lstms: list[LstmLayer] = []
        prev = self.spec.input_size
        for h in self.spec.hidden_sizes:
            self.lstms.append(LstmLayer(prev, h, rng))
            prev = h
        self._trunk_out = prev
        self.heads: dict[str, DenseLayer] = {
            u: DenseLayer(prev, self.spec.output_size, rng) for u in users}
        self.active = list(users)[0]

    def add_head(self, user: str, rng: np.random.Generator, activate: bool = True) -> None:
        if user in self.heads:
            raise ValueError(f"head {user!r} already exists")
        self.heads[user] = DenseLayer(self._trunk_out, self.spec.output_size, rng)
        if activate:
            self.active = user

    def set_active(self, user: str) -> None:
        if user not in self.heads:
            raise ValueError(f"no head for user {user!r}")
        self.active = user

    def init_state(self, batch: int = 1) -> neural.LstmState:
        return [(np.zeros((batch, l.hidden)), np.zeros((batch, l.hidden)))
                for l in self.lstms]

    def _trunk_forward(self, xs, state):
        acts = []
        new_state = []
        for layer, (h, c) in zip(self.lstms, state):
            xs, h, c, caches = layer.forward(xs, h, c)
            acts.append(caches)
            new_state.append((h, c))
        return xs, acts, new_state

    def step(self, x: np.ndarray, state: neural.LstmState
             ) -> tuple[np.ndarray, neural.LstmState]:
        new_state = []
        for layer, (h, c) in zip(self.lstms, state):
            h, c = layer.step(x, h, c)
            new_state.append((h, c))
            x = h
        y, _ = self.heads[self.active].forward(x[None])
        return y[0], new_state

    def forward(self, xs: np.ndarray, state: neural.LstmState | None = None
                ) -> tuple[np.ndarray, neural.LstmState]:
        xs = np.asarray(xs, dtype=np.float64)
        squeeze = xs.ndim == 2
        if squeeze:
            xs = xs[:, None, :]
        if state is None:
            state = self.init_state(xs.shape[1])
        hs, _, new_state = self._trunk_forward(xs, state)
        ys, _ = self.heads[self.active].forward(hs)
        return (ys[:, 0, :] if squeeze else ys), new_state

    def trainable_params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.lstms:
            out.extend(layer.params())
        out.extend(self.heads[self.active].params())
        return out

    def trainable_velocities(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.lstms:
            out.extend(layer.velocities())
        out.extend(self.heads[self.active].velocities())
        return out

    def backward(self, xs: np.ndarray, targets: np.ndarray) -> list[np.ndarray]:
        """MSE gradients for the trunk and the active head only."""
        xs = np.asarray(xs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if xs.ndim == 2:
            xs, targets = xs[:, None, :], targets[:, None, :]
        head = self.heads[self.active]
        hs, acts, _ = self._trunk_forward(xs, self.init_state(xs.shape[1]))
        ys, cache = head.forward(hs)
        dys = 2.0 * (ys - targets) / ys.size
        dhs, head_grads = head.backward(dys, cache)
        grads_rev = [head_grads]
        for layer, caches in zip(reversed(self.lstms), reversed(acts)):
            dhs, g = layer.backward(dhs, caches)
            grads_rev.append(g)
        out: list[np.ndarray] = []
        for g in reversed(grads_rev):
            out.extend(g)
        return out

    def clone(self) -> "MultiHeadModel":
        import copy
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        params = {}
        for k, layer in enumerate(self.lstms):
            for j, p in enumerate(layer.params()):
                params[f"lstm{k}.{j}"] = {"shape": list(p.shape),
                                          "data": p.ravel().tolist()}
        for u, head in self.heads.items():
            for j, p in enumerate(head.params()):
                params[f"head:{u}.{j}"] = {"shape": list(p.shape),
                                           "data": p.ravel().tolist()}
        s = self.spec
        return {"format": MULTIHEAD_FORMAT,
                "spec": {"input_size": s.input_size,
                         "hidden_sizes": list(s.hidden_sizes),
                         "output_size": s.output_size,
                         "eta": s.eta, "mu": s.mu, "lam": s.lam},
                "users": sorted(self.heads), "active": self.active,
                "params": params}

    @classmethod
    def from_dict(cls, data: dict) -> "MultiHeadModel":
        if data.get("format") != MULTIHEAD_FORMAT:
            raise ValueError(f"unsupported model format: {data.get('format')!r}")
        s = data["spec"]
        spec = NetSpec(s["input_size"], tuple(s["hidden_sizes"]), s["output_size"],
                       s["eta"], s["mu"], s["lam"])
        mh = cls(data["users"], np.random.default_rng(0), spec)
        layers = {f"lstm{k}": l for k, l in enumerate(mh.lstms)}
        layers.update({f"head:{u}": h for u, h in mh.heads.items()})
        for key, blob in data["params"].items():
            tag, j = key.rsplit(".", 1)
            p = layers[tag].params()[int(j)]
            arr = np.asarray(blob["data"], dtype=np.float64).reshape(blob["shape"])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {key} has shape {arr.shape}, "
                                 f"expected {p.shape}")
            p[...] = arr
        mh.set_active(data["active"])
        return mh

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "MultiHeadModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))


class ExpertsModel:
    """Frozen expert bank + trainable newcomer, mixed by a linear combiner.

    The combiner has no bias and starts as the block-average map, so the
    fresh ensemble predicts the plain mean of its members.  With
    include_newcomer=False the newcomer block is absent entirely (the
    no-scratch variant).
    """

    def __init__(self, experts: Sequence[Network], rng: np.random.Generator,
                 include_newcomer: bool = True, newcomer_spec: NetSpec | None = None):
        if not experts and not include_newcomer:
            raise ValueError("no experts and no newcomer: nothing to combine")
        self.experts = list(experts)
        self.include_newcomer = include_newcomer
        self.newcomer = (Network(newcomer_spec or person_spec(), rng)
                         if include_newcomer else None)
        n_blocks = len(self.experts) + (1 if include_newcomer else 0)
        out = 3
        self.combiner = DenseLayer(out * n_blocks, out, rng, use_bias=False)
        w = np.zeros((out, out * n_blocks))
        for k in range(n_blocks):
            w[:, out * k:out * (k + 1)] = np.eye(out) / n_blocks
        self.combiner.w[...] = w
        self.spec = self.newcomer.spec if self.newcomer is not None else person_spec()

    @property
    def members(self) -> list[Network]:
        return self.experts + ([self.newcomer] if self.newcomer is not None else [])

    def init_state(self, batch: int = 1) -> list:
        return [m.init_state(batch) for m in self.members]

    def member_outputs(self, x: np.ndarray, state: list
                       ) -> tuple[np.ndarray, list]:
        outs, new_state = [], []
        for m, st in zip(self.members, state):
            y, st2 = m.step(x, st)
            outs.append(y)
            new_state.append(st2)
        return np.concatenate(outs, axis=1), new_state

    def step(self, x: np.ndarray, state: list) -> tuple[np.ndarray, list]:
        stacked, new_state = self.member_outputs(x, state)
        return stacked @ self.combiner.w.T, new_state

    def forward(self, xs: np.ndarray, state: list | None = None
                ) -> tuple[np.ndarray, list]:
        xs = np.asarray(xs, dtype=np.float64)
        squeeze = xs.ndim == 2
        if squeeze:
            xs = xs[:, None, :]
        if state is None:
            state = self.init_state(xs.shape[1])
        ys = np.empty((xs.shape[0], xs.shape[1], 3))
        for t in range(xs.shape[0]):
            y, state = self.step(xs[t], state)
            ys[t] = y
        return (ys[:, 0, :] if squeeze else ys), state

    def trainable_params(self) -> list[np.ndarray]:
        out = self.combiner.params()
        if self.newcomer is not None:
            out = out + self.newcomer.params()
        return out

    def trainable_velocities(self) -> list[np.ndarray]:
        out = self.combiner.velocities()
        if self.newcomer is not None:
            out = out + self.newcomer.velocities()
        return out

    def frozen_checksum(self) -> str:
        params: list[np.ndarray] = []
        for e in self.experts:
            params.extend(e.params())
        return param_checksum(params)

    def clone(self) -> "ExpertsModel":
        import copy
        return copy.deepcopy(self)


AnyModel = Network | MultiHeadModel | ExpertsModel


def _clamp_rho(y: np.ndarray) -> np.ndarray:
    out = y.copy()
    out[..., 0] = np.maximum(out[..., 0], 0.0)
    return out


def predict_step(model: AnyModel, s_hat: ReparamState, surround: SurroundState,
                 action, hidden) -> tuple[ReparamState, object]:
    """One dynamics step; the speed-magnitude output is clamped at 0."""
    x = pack_input(s_hat, surround, action)
    y, hidden = model.step(x[None], hidden)
    y = _clamp_rho(y)
    return ReparamState.from_array(y[0]), hidden


def experts_predict(em: ExpertsModel, s_hat: ReparamState, surround: SurroundState,
                    action, hidden) -> tuple[ReparamState, list]:
    return predict_step(em, s_hat, surround, action, hidden)


def update_weights(em: ExpertsModel, batch: Sequence[Transition],
                   eta: float | None = None, lam: float | None = None,
                   epochs: int = UPDATE_EPOCHS, mu: float | None = None,
                   clip: float = GRAD_CLIP) -> list[float]:
    """Adapt the combiner and newcomer on one batch of observed transitions.

    Loss is the batch MSE plus (lam/2) over the trainable parameters; the
    batch is treated as one teacher-forced sequence from a fresh hidden
    state each epoch.  Frozen expert outputs are computed once and reused
    across epochs.  Returns the per-epoch pre-update losses.
    """
    if not batch:
        raise ValueError("empty update batch")
    eta = em.spec.eta if eta is None else eta
    mu = em.spec.mu if mu is None else mu
    lam = em.spec.lam if lam is None else lam
    xs, ts = transitions_to_arrays(batch)
    xs3 = xs[:, None, :]
    ts3 = ts[:, None, :]
    T = xs3.shape[0]
    expert_out = np.empty((T, 1, 3 * len(em.experts)))
    for j, e in enumerate(em.experts):
        ys, _ = e.forward(xs3)
        expert_out[:, :, 3 * j:3 * j + 3] = ys
    losses = []
    for _ in range(epochs):
        if em.newcomer is not None:
            nys, _ = em.newcomer.forward(xs3)
            stacked = np.concatenate([expert_out, nys], axis=2)
        else:
            stacked = expert_out
        ys, comb_cache = em.combiner.forward(stacked)
        losses.append(neural.mse_loss(ys, ts3))
        dys = 2.0 * (ys - ts3) / ys.size
        dstacked, comb_grads = em.combiner.backward(dys, comb_cache)
        grads = list(comb_grads)
        if em.newcomer is not None:
            grads += neural.backward_from(em.newcomer, xs3, dstacked[:, :, -3:])
        grads = [g + lam * p for g, p in zip(grads, em.trainable_params())]
        grads = neural.clip_global_norm(grads, clip)
        neural.sgd_update(em.trainable_params(), em.trainable_velocities(),
                          grads, eta, mu)
    return losses


@dataclass
class RolloutResult:
    s_hats: list[ReparamState]
    poses: list[HumanState]
    surrounds: list[SurroundState]
    left_bounds: bool
    hidden: object
    ctx: ReparamContext


def rollout(model: AnyModel, s0: FullState, s_hat0: ReparamState, actions: Sequence,
            plan: FloorPlan, ctx: ReparamContext | None = None, hidden=None,
            dt: float = DT) -> RolloutResult:
    """Roll the model forward through the map for len(actions) steps.

    Each step consumes the surroundings at the current (predicted) position,
    predicts the next motion, integrates it to a pose, and re-extracts
    surroundings there.  Positions that leave the grid are clamped for
    feature extraction and flagged.
    """
    if not len(actions):
        raise ValueError("horizon must be at least 1")
    b = _start_batch(s0, s_hat0, ctx, dt)
    enc = np.stack([encode_action(a) if isinstance(a, Action) else np.asarray(a)
                    for a in actions])
    rb = rollout_batch(model, b, enc[None], plan, hidden=hidden, dt=dt,
                       first_surround=s0.surround)
    H = len(actions)
    poses = [HumanState(rb.x[0, k], rb.y[0, k], rb.alpha[0, k]) for k in range(H)]
    s_hats = [ReparamState.from_array(rb.s_hat[0, k]) for k in range(H)]
    surrounds = [SurroundState(rb.o[0, k], rb.l[0, k]) for k in range(H)]
    return RolloutResult(s_hats, poses, surrounds, bool(rb.left_bounds[0]),
                         rb.hidden, ReparamContext(float(rb.beta[0]), dt))


@dataclass
class StartBatch:
    """Initial conditions for a batch of rollouts, one row per trajectory."""

    x: np.ndarray
    y: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    s_hat: np.ndarray  # (B, 3)


def _start_batch(s0: FullState, s_hat0: ReparamState,
                 ctx: ReparamContext | None, dt: float) -> StartBatch:
    beta = ctx.beta_prev if ctx is not None else s0.human.alpha
    h = s0.human
    return StartBatch(np.array([h.x]), np.array([h.y]), np.array([h.alpha]),
                      np.array([beta]), s_hat0.as_array()[None])


@dataclass
class RolloutBatch:
    s_hat: np.ndarray  # (B, H, 3) predicted motions
    x: np.ndarray      # (B, H) integrated positions
    y: np.ndarray
    alpha: np.ndarray  # (B, H)
    o: np.ndarray      # (B, H, 24) features consumed at each step
    l: np.ndarray      # (B, H, 96)
    left_bounds: np.ndarray  # (B,) bool
    hidden: object     # model state after the last step
    beta: np.ndarray   # (B,) final velocity direction carry


def rollout_batch(model: AnyModel, start: StartBatch, actions_enc: np.ndarray,
                  plan: FloorPlan, hidden=None, dt: float = DT,
                  first_surround: SurroundState | None = None,
                  project: bool = False) -> RolloutBatch:
    """Vectorized rollouts: B trajectories of H steps in lockstep.

    actions_enc is (B, H, action-width).  All trajectories share the model
    (and its hidden-state batch); rows evolve independently.  With
    project=True each step's displacement stops at the last free sample
    point, the way the world stops a real walker at a wall; prediction
    scoring stays pure integration by default.
    """
    B, H = actions_enc.shape[:2]
    x = start.x.astype(np.float64).copy()
    y = start.y.astype(np.float64).copy()
    alpha = start.alpha.astype(np.float64).copy()
    beta = start.beta.astype(np.float64).copy()
    s_hat = start.s_hat.astype(np.float64).copy()
    if hidden is None:
        hidden = model.init_state(B)
    out_s = np.empty((B, H, 3))
    out_x = np.empty((B, H))
    out_y = np.empty((B, H))
    out_a = np.empty((B, H))
    out_o = np.empty((B, H, 24))
    out_l = np.empty((B, H, 96))
    left = np.zeros(B, dtype=bool)
    ex, ey = plan.extent
    for k in range(H):
        if k == 0 and first_surround is not None and B == 1:
            o = first_surround.o[None]
            l = first_surround.l[None]
        else:
            o, l = occupancy_features_batch(plan, x, y, alpha, clip=True)
        out_o[:, k] = o
        out_l[:, k] = l
        xin = np.concatenate([s_hat, o, l, actions_enc[:, k]], axis=1)
        pred, hidden = model.step(xin, hidden)
        pred = _clamp_rho(pred)
        beta = np.arctan2(np.sin(beta + pred[:, 1] * dt),
                          np.cos(beta + pred[:, 1] * dt))
        nx = x + pred[:, 0] * np.cos(beta) * dt
        ny = y + pred[:, 0] * np.sin(beta) * dt
        # wrap with the same scalar function pose construction uses, so a
        # continuation started from an emitted pose sees identical bits
        alpha = np.array([wrap_angle(v) for v in alpha + pred[:, 2] * dt])
        outside = (nx < 0) | (nx >= ex) | (ny < 0) | (ny >= ey)
        left |= outside
        if project:
            x, y = advance_free_batch(plan, x, y, nx, ny)
        else:
            x, y = nx, ny
        np.clip(x, 0.0, ex * (1 - 1e-9), out=x)
        np.clip(y, 0.0, ey * (1 - 1e-9), out=y)
        s_hat = pred
        out_s[:, k] = pred
        out_x[:, k] = x
        out_y[:, k] = y
        out_a[:, k] = alpha
    return RolloutBatch(out_s, out_x, out_y, out_a, out_o, out_l, left, hidden, beta)


# ---- training ----


def windows_from_transitions(stream: Sequence[Transition], window: int = 60
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Chop a transition stream into fixed windows stacked on the batch axis:
    (window, n_windows, input) inputs and matching targets.  The tail
    shorter than one window is dropped."""
    xs, ts = transitions_to_arrays(stream)
    n = len(stream) // window
    if n == 0:
        raise ValueError(f"stream shorter than one window ({len(stream)} < {window})")
    xs = xs[:n * window].reshape(n, window, -1).transpose(1, 0, 2)
    ts = ts[:n * window].reshape(n, window, -1).transpose(1, 0, 2)
    return xs, ts


def train_network(net: Network | MultiHeadModel, xs: np.ndarray, ts: np.ndarray,
                  epochs: int, eta: float | None = None, mu: float | None = None,
                  lam: float | None = None, clip: float = GRAD_CLIP) -> list[float]:
    """Full-batch momentum SGD; returns per-epoch pre-update losses."""
    spec = net.spec
    eta = spec.eta if eta is None else eta
    mu = spec.mu if mu is None else mu
    lam = spec.lam if lam is None else lam
    if isinstance(net, MultiHeadModel):
        params, vels = net.trainable_params(), net.trainable_velocities()
        bw = net.backward
    else:
        params, vels = net.params(), net.velocities()
        bw = lambda a, b: neural.backward(net, a, b)
    losses = []
    for _ in range(epochs):
        ys, _ = net.forward(xs)
        losses.append(neural.mse_loss(ys, ts))
        grads = bw(xs, ts)
        grads = [g + lam * p for g, p in zip(grads, params)]
        grads = neural.clip_global_norm(grads, clip)
        neural.sgd_update(params, vels, grads, eta, mu)
    return losses


def finetune_step(model: Network | MultiHeadModel, batch: Sequence[Transition],
                  eta: float | None = None, lam: float | None = None,
                  clip: float = GRAD_CLIP) -> float:
    """One SGD step on a transition batch; for the multi-head model only the
    trunk and the active (new user's) head move."""
    if not batch:
        raise ValueError("empty update batch")
    xs, ts = transitions_to_arrays(batch)
    loss = train_network(model, xs, ts, epochs=1, eta=eta, lam=lam, clip=clip)[0]
    return loss


def augment_windows(xs: np.ndarray, ts: np.ndarray, rng: np.random.Generator,
                    copies: int = 2, sd: float = 0.08
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Add window copies whose motion inputs carry Gaussian noise while the
    targets stay exact.  Training on these pulls off-manifold inputs back
    toward the recorded motion, which keeps multi-step rollouts (which feed
    back their own predictions) from wandering off."""
    outx, outt = [xs], [ts]
    for _ in range(copies):
        xn = xs.copy()
        xn[:, :, :3] += rng.normal(0.0, sd, xn[:, :, :3].shape)
        outx.append(xn)
        outt.append(ts)
    return np.concatenate(outx, axis=1), np.concatenate(outt, axis=1)


def _staged_train(net, xs, ts, stages, epochs) -> None:
    if stages is None:
        train_network(net, xs, ts, epochs)
    else:
        for eta, ep in stages:
            train_network(net, xs, ts, epochs=ep, eta=eta)


def pretrain(kind: str, datasets: dict[str, Sequence[Transition]],
             rng: np.random.Generator, spec: NetSpec | None = None,
             epochs: int = 30, window: int = 60,
             stages: Sequence[tuple[float, int]] | None = None,
             noise_copies: int = 0, noise_sd: float = 0.08):
    """Train source models from per-user transition streams.

    kind 'experts' -> {user: Network}; 'agnostic' -> one pooled Network;
    'multihead' -> MultiHeadModel with one head per user.  ``stages``
    optionally replaces the flat epoch count with an (eta, epochs) decay
    schedule; ``noise_copies`` adds noise-augmented window copies.
    """
    if not datasets or any(len(d) == 0 for d in datasets.values()):
        raise ValueError("every user needs a nonempty dataset")
    users = sorted(datasets)

    def load(u):
        xs, ts = windows_from_transitions(datasets[u], window)
        if noise_copies:
            return augment_windows(xs, ts, rng, noise_copies, noise_sd)
        return xs, ts

    if kind == "experts":
        out = {}
        for u in users:
            net = Network(spec or person_spec(), rng)
            xs, ts = load(u)
            _staged_train(net, xs, ts, stages, epochs)
            out[u] = net
        return out
    if kind == "agnostic":
        net = Network(spec or agnostic_spec(), rng)
        per_user = [load(u) for u in users]
        xs = np.concatenate([x for x, _ in per_user], axis=1)
        ts = np.concatenate([t for _, t in per_user], axis=1)
        _staged_train(net, xs, ts, stages, epochs)
        return net
    if kind == "multihead":
        mh = MultiHeadModel(users, rng, spec)
        per_user = {u: load(u) for u in users}
        schedule = stages if stages is not None else ((None, epochs),)
        for eta, ep in schedule:
            for _ in range(ep):
                for u in users:  # route each user's windows through their head
                    mh.set_active(u)
                    xs, ts = per_user[u]
                    train_network(mh, xs, ts, epochs=1, eta=eta)
        return mh
    raise ValueError(f"unknown pretrain kind {kind!r}")


def save_bank(directory, experts: dict[str, Network], seed: int) -> None:
    d = pathlib.Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for u, net in experts.items():
        net.save(d / f"{u}.json")
    manifest = {"format": BANK_FORMAT, "users": sorted(experts), "seed": seed,
                "checksums": {u: param_checksum(net.params())
                              for u, net in sorted(experts.items())}}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_bank(directory) -> tuple[dict[str, Network], dict]:
    d = pathlib.Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format") != BANK_FORMAT:
        raise ValueError(f"unsupported bank format {manifest.get('format')!r}")
    experts = {u: Network.load(d / f"{u}.json") for u in manifest["users"]}
    for u, net in experts.items():
        want = manifest["checksums"][u]
        got = param_checksum(net.params())
        if got != want:
            raise ValueError(f"expert {u!r} fails its manifest checksum")
    return experts, manifest


# ---- non-neural baselines ----


def constant_velocity_predict(history: Sequence[HumanState], horizon: int,
                              dt: float = DT) -> list[HumanState]:
    """Extrapolate the last observed velocity; heading frozen."""
    if len(history) < 2:
        raise ValueError("constant-velocity needs at least 2 states")
    a, b = history[-2], history[-1]
    vx, vy = (b.x - a.x) / dt, (b.y - a.y) / dt
    return [HumanState(b.x + vx * dt * k, b.y + vy * dt * k, b.alpha)
            for k in range(1, horizon + 1)]


class KalmanCV:
    """Linear Kalman filter, state [x, y, vx, vy], position observations."""

    def __init__(self, x0: float, y0: float, dt: float = DT,
                 q_var: float = 0.5, r_var: float = 1.436 ** 2,
                 p0_pos: float | None = None, p0_vel: float = 10.0):
        self.dt = dt
        self.m = np.array([x0, y0, 0.0, 0.0])
        p0_pos = r_var if p0_pos is None else p0_pos
        self.P = np.diag([p0_pos, p0_pos, p0_vel, p0_vel])
        self.F = np.array([[1, 0, dt, 0], [0, 1, 0, dt],
                           [0, 0, 1, 0], [0, 0, 0, 1]], dtype=np.float64)
        # discrete white-noise acceleration, per axis
        q = q_var * np.array([[dt ** 4 / 4, dt ** 3 / 2],
                              [dt ** 3 / 2, dt ** 2]])
        self.Q = np.zeros((4, 4))
        for i in (0, 1):
            self.Q[i, i] = q[0, 0]
            self.Q[i, i + 2] = q[0, 1]
            self.Q[i + 2, i] = q[1, 0]
            self.Q[i + 2, i + 2] = q[1, 1]
        self.H = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=np.float64)
        self.R = np.eye(2) * r_var

    def predict(self) -> None:
        self.m = self.F @ self.m
        self.P = self.F @ self.P @ self.F.T + self.Q

    def update(self, z) -> None:
        z = np.asarray(z, dtype=np.float64)
        S = self.H @ self.P @ self.H.T + self.R
        K = self.P @ self.H.T @ np.linalg.inv(S)
        self.m = self.m + K @ (z - self.H @ self.m)
        self.P = (np.eye(4) - K @ self.H) @ self.P


def kalman_predict(history: Sequence[HumanState], horizon: int, dt: float = DT,
                   q_var: float = 0.5, r_var: float = 1.436 ** 2) -> list[HumanState]:
    """Filter the position history, then run the motion model forward."""
    if len(history) < 2:
        raise ValueError("kalman needs at least 2 states")
    kf = KalmanCV(history[0].x, history[0].y, dt, q_var, r_var)
    for s in history[1:]:
        kf.predict()
        kf.update([s.x, s.y])
    out = []
    alpha = history[-1].alpha
    for _ in range(horizon):
        kf.predict()
        vx, vy = kf.m[2], kf.m[3]
        if math.hypot(vx, vy) > 1e-6:
            alpha = math.atan2(vy, vx)
        out.append(HumanState(kf.m[0], kf.m[1], alpha))
    return out


class LinearRegressor:
    """Least-squares map from (motion, surroundings, action, 1) to the next
    motion, used recursively through the shared rollout machinery."""

    def __init__(self):
        self.w: np.ndarray | None = None

    def fit(self, transitions: Sequence[Transition], ridge: float = 1e-6
            ) -> "LinearRegressor":
        if len(transitions) < 2:
            raise ValueError("need at least 2 transitions to fit")
        xs, ts = transitions_to_arrays(transitions)
        A = np.hstack([xs, np.ones((len(xs), 1))])
        gram = A.T @ A + ridge * np.eye(A.shape[1])
        self.w = np.linalg.solve(gram, A.T @ ts).T  # (3, d+1)
        return self

    def init_state(self, batch: int = 1):
        return None

    def step(self, x: np.ndarray, state) -> tuple[np.ndarray, None]:
        if self.w is None:
            raise ValueError("regressor is not fitted")
        ones = np.ones((x.shape[0], 1))
        return np.hstack([x, ones]) @ self.w.T, None

    def forward(self, xs: np.ndarray, state=None) -> tuple[np.ndarray, None]:
        xs = np.asarray(xs, dtype=np.float64)
        squeeze = xs.ndim == 2
        if squeeze:
            xs = xs[:, None, :]
        ones = np.ones((*xs.shape[:2], 1))
        ys = np.concatenate([xs, ones], axis=2) @ self.w.T
        return (ys[:, 0, :] if squeeze else ys), None

    def params(self) -> list[np.ndarray]:
        return [] if self.w is None else [self.w]


def baseline_predict(kind: str, history: Sequence[HumanState], horizon: int,
                     dt: float = DT, **kw) -> list[HumanState]:
    if kind == "constant-velocity":
        return constant_velocity_predict(history, horizon, dt)
    if kind == "kalman":
        return kalman_predict(history, horizon, dt, **kw)
    raise ValueError(f"unknown baseline kind {kind!r}")
