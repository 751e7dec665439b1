"""Self-contained recurrent network engine.

LSTM and dense layers in float64 numpy, backpropagation through time, SGD
with momentum, and a finite-difference gradient checker.  Deliberately tiny:
the models here have at most a few hundred units, and exact reproducibility
matters more than speed.  Gradient clipping and L2 shrinkage are separate
operations applied after ``backward``, so the analytic gradients stay
directly comparable to finite differences.

A network is single-writer: training mutates it in place.  ``clone`` gives
an independent frozen snapshot for concurrent read-only evaluation.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

FORMAT_TAG = "pingnav-net-v1"

# Hidden state per LSTM layer: (h, c), each (B, hidden)
LstmState = list[tuple[np.ndarray, np.ndarray]]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class NetSpec:
    input_size: int
    hidden_sizes: tuple[int, ...]
    output_size: int
    eta: float = 1e-2
    mu: float = 0.9
    lam: float = 1e-4

    def __post_init__(self):
        sizes = (self.input_size, *self.hidden_sizes, self.output_size)
        if any(int(s) != s or s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive ints: {sizes}")
        if self.eta <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.lam < 0:
            raise ValueError("L2 coefficient must be nonnegative")

    @property
    def depth(self) -> int:
        return len(self.hidden_sizes)


class DenseLayer:
    """Affine map y = x W^T + b; with use_bias=False a pure linear map."""

    def __init__(self, in_size: int, out_size: int, rng: np.random.Generator,
                 use_bias: bool = True):
        lim = 1.0 / math.sqrt(in_size)
        self.w = rng.uniform(-lim, lim, size=(out_size, in_size))
        self.b = np.zeros(out_size) if use_bias else None
        self.vw = np.zeros_like(self.w)
        self.vb = np.zeros_like(self.b) if use_bias else None

    def params(self) -> list[np.ndarray]:
        return [self.w] if self.b is None else [self.w, self.b]

    def velocities(self) -> list[np.ndarray]:
        return [self.vw] if self.b is None else [self.vw, self.vb]

    def forward(self, xs: np.ndarray) -> tuple[np.ndarray, dict]:
        ys = xs @ self.w.T
        if self.b is not None:
            ys = ys + self.b
        return ys, {"x": xs}

    def backward(self, dys: np.ndarray, cache: dict) -> tuple[np.ndarray, list[np.ndarray]]:
        xs = cache["x"]
        dw = np.einsum("tbo,tbi->oi", dys, xs)
        dxs = dys @ self.w
        if self.b is None:
            return dxs, [dw]
        return dxs, [dw, dys.sum(axis=(0, 1))]


class LstmLayer:
    """Standard LSTM cell, gate order [input, forget, candidate, output].

    Gate weights live in stacked (4h, in) and (4h, h) blocks; the forget-gate
    bias starts at +1 so fresh cells retain state.
    """

    def __init__(self, in_size: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        lim = 1.0 / math.sqrt(in_size)
        self.wx = rng.uniform(-lim, lim, size=(4 * hidden, in_size))
        lim_h = 1.0 / math.sqrt(hidden)
        self.wh = rng.uniform(-lim_h, lim_h, size=(4 * hidden, hidden))
        self.b = np.zeros(4 * hidden)
        self.b[hidden:2 * hidden] = 1.0
        self.vwx = np.zeros_like(self.wx)
        self.vwh = np.zeros_like(self.wh)
        self.vb = np.zeros_like(self.b)

    def params(self) -> list[np.ndarray]:
        return [self.wx, self.wh, self.b]

    def velocities(self) -> list[np.ndarray]:
        return [self.vwx, self.vwh, self.vb]

    def _gates(self, x: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, ...]:
        hsz = self.hidden
        z = x @ self.wx.T + h @ self.wh.T + self.b
        return (_sigmoid(z[:, :hsz]), _sigmoid(z[:, hsz:2 * hsz]),
                np.tanh(z[:, 2 * hsz:3 * hsz]), _sigmoid(z[:, 3 * hsz:]))

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray
             ) -> tuple[np.ndarray, np.ndarray]:
        i, f, g, o = self._gates(x, h)
        c_new = f * c + i * g
        return o * np.tanh(c_new), c_new

    def forward(self, xs: np.ndarray, h0: np.ndarray, c0: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray, list]:
        T = xs.shape[0]
        h, c = h0, c0
        hs = np.empty((T, *h0.shape))
        caches = []
        for t in range(T):
            i, f, g, o = self._gates(xs[t], h)
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            caches.append((xs[t], h, c, i, f, g, o, tc))
            h, c = h_new, c_new
            hs[t] = h
        return hs, h, c, caches

    def backward(self, dhs: np.ndarray, caches: list
                 ) -> tuple[np.ndarray, list[np.ndarray]]:
        """BPTT given dL/d(h_t) for every step; returns dL/d(x_t) and grads."""
        dwx = np.zeros_like(self.wx)
        dwh = np.zeros_like(self.wh)
        db = np.zeros_like(self.b)
        dxs = np.empty((len(caches), *caches[0][0].shape))
        dh_next = np.zeros_like(dhs[0])
        dc_next = np.zeros_like(dhs[0])
        for t in range(len(caches) - 1, -1, -1):
            x, h_prev, c_prev, i, f, g, o, tc = caches[t]
            dh = dhs[t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                                 dg * (1 - g * g), do * o * (1 - o)], axis=1)
            dwx += dz.T @ x
            dwh += dz.T @ h_prev
            db += dz.sum(axis=0)
            dxs[t] = dz @ self.wx
            dh_next = dz @ self.wh
        return dxs, [dwx, dwh, db]


class Network:
    """Stack of LSTM layers topped by a linear readout."""

    def __init__(self, spec: NetSpec, rng: np.random.Generator | None = None):
        self.spec = spec
        rng = rng if rng is not None else np.random.default_rng(0)
        self.lstms: list[LstmLayer] = []
        prev = spec.input_size
        for h in spec.hidden_sizes:
            self.lstms.append(LstmLayer(prev, h, rng))
            prev = h
        self.head = DenseLayer(prev, spec.output_size, rng)

    # ---- parameter plumbing ----

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.lstms:
            out.extend(layer.params())
        out.extend(self.head.params())
        return out

    def velocities(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.lstms:
            out.extend(layer.velocities())
        out.extend(self.head.velocities())
        return out

    def clone(self) -> "Network":
        return copy.deepcopy(self)

    # ---- inference ----

    def init_state(self, batch: int = 1) -> LstmState:
        return [(np.zeros((batch, l.hidden)), np.zeros((batch, l.hidden)))
                for l in self.lstms]

    def step(self, x: np.ndarray, state: LstmState) -> tuple[np.ndarray, LstmState]:
        """One time step for a (B, input) batch; returns (B, output)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_size:
            raise ValueError(f"expected (B, {self.spec.input_size}) input, got {x.shape}")
        new_state: LstmState = []
        for layer, (h, c) in zip(self.lstms, state):
            h, c = layer.step(x, h, c)
            new_state.append((h, c))
            x = h
        y, _ = self.head.forward(x[None])
        return y[0], new_state

    def forward(self, xs: np.ndarray, state: LstmState | None = None
                ) -> tuple[np.ndarray, LstmState]:
        """Full sequence pass. xs is (T, input) or (T, B, input); the output
        keeps the same batchedness."""
        xs = np.asarray(xs, dtype=np.float64)
        squeeze = xs.ndim == 2
        if squeeze:
            xs = xs[:, None, :]
        if xs.shape[2] != self.spec.input_size:
            raise ValueError(f"expected input width {self.spec.input_size}, "
                             f"got {xs.shape[2]}")
        if state is None:
            state = self.init_state(xs.shape[1])
        new_state: LstmState = []
        for layer, (h, c) in zip(self.lstms, state):
            xs, h, c, _ = layer.forward(xs, h, c)
            new_state.append((h, c))
        ys, _ = self.head.forward(xs)
        return (ys[:, 0, :] if squeeze else ys), new_state

    # ---- training ----

    def _forward_cached(self, xs: np.ndarray, state: LstmState):
        acts = []
        for layer, (h, c) in zip(self.lstms, state):
            xs, h, c, caches = layer.forward(xs, h, c)
            acts.append(caches)
        ys, head_cache = self.head.forward(xs)
        return ys, acts, head_cache

    # ---- serialization ----

    def to_dict(self) -> dict:
        names = []
        for k, layer in enumerate(self.lstms):
            names.append((f"lstm{k}", layer))
        names.append(("head", self.head))
        params = {}
        for tag, layer in names:
            for j, p in enumerate(layer.params()):
                params[f"{tag}.{j}"] = {"shape": list(p.shape), "data": p.ravel().tolist()}
        return {"format": FORMAT_TAG,
                "spec": {"input_size": self.spec.input_size,
                         "hidden_sizes": list(self.spec.hidden_sizes),
                         "output_size": self.spec.output_size,
                         "eta": self.spec.eta, "mu": self.spec.mu,
                         "lam": self.spec.lam},
                "params": params}

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        if data.get("format") != FORMAT_TAG:
            raise ValueError(f"unsupported model format: {data.get('format')!r}")
        s = data["spec"]
        spec = NetSpec(s["input_size"], tuple(s["hidden_sizes"]), s["output_size"],
                       s["eta"], s["mu"], s["lam"])
        net = cls(spec)
        for p, (key, blob) in zip(net.params(), sorted(data["params"].items(),
                                                       key=lambda kv: _param_order(kv[0]))):
            arr = np.asarray(blob["data"], dtype=np.float64).reshape(blob["shape"])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {key} has shape {arr.shape}, "
                                 f"expected {p.shape}")
            p[...] = arr
        return net

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "Network":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _param_order(key: str) -> tuple:
    tag, j = key.split(".")
    rank = (1 << 30, 0) if tag == "head" else (int(tag[4:]), 0)
    return (*rank, int(j))


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over every time step and component of the squared difference."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def _chain_backward(net: Network, dys: np.ndarray, acts: list, head_cache: dict
                    ) -> list[np.ndarray]:
    dxs, head_grads = net.head.backward(dys, head_cache)
    grads_rev: list[list[np.ndarray]] = [head_grads]
    for layer, caches in zip(reversed(net.lstms), reversed(acts)):
        dxs, g = layer.backward(dxs, caches)
        grads_rev.append(g)
    out: list[np.ndarray] = []
    for g in reversed(grads_rev):
        out.extend(g)
    return out


def backward_from(net: Network, xs: np.ndarray, dys: np.ndarray,
                  state: LstmState | None = None) -> list[np.ndarray]:
    """Gradients for every parameter given upstream dL/d(output), shape
    (T, B, out).  Lets a caller chain this network into a larger graph."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 2:
        xs = xs[:, None, :]
    if state is None:
        state = net.init_state(xs.shape[1])
    _, acts, head_cache = net._forward_cached(xs, state)
    return _chain_backward(net, dys, acts, head_cache)


def backward(net: Network, xs: np.ndarray, targets: np.ndarray,
             state: LstmState | None = None) -> list[np.ndarray]:
    """Exact gradients of mse_loss(net(xs), targets) for every parameter,
    in net.params() order.  L2 and clipping are applied separately."""
    xs = np.asarray(xs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if xs.ndim == 2:
        xs = xs[:, None, :]
        targets = targets[:, None, :]
    if state is None:
        state = net.init_state(xs.shape[1])
    ys, acts, head_cache = net._forward_cached(xs, state)
    if ys.shape != targets.shape:
        raise ValueError(f"shape mismatch: {ys.shape} vs {targets.shape}")
    dys = 2.0 * (ys - targets) / ys.size
    return _chain_backward(net, dys, acts, head_cache)


def add_l2(grads: Sequence[np.ndarray], net: Network, lam: float) -> list[np.ndarray]:
    """Gradient of the shrinkage term (lam/2) theta^T theta is exactly lam*theta."""
    return [g + lam * p for g, p in zip(grads, net.params())]


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float = 5.0
                     ) -> list[np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm or total == 0.0:
        return list(grads)
    scale = max_norm / total
    return [g * scale for g in grads]


def sgd_update(params: Sequence[np.ndarray], velocities: Sequence[np.ndarray],
               grads: Sequence[np.ndarray], eta: float, mu: float) -> None:
    """v <- mu v + g; theta <- theta - eta v, in place, for any param set."""
    for p, v, g in zip(params, velocities, grads):
        v *= mu
        v += g
        p -= eta * v


def sgd_step(net: Network, grads: Sequence[np.ndarray],
             eta: float | None = None, mu: float | None = None) -> None:
    """Momentum SGD over every parameter of the network."""
    eta = net.spec.eta if eta is None else eta
    mu = net.spec.mu if mu is None else mu
    sgd_update(net.params(), net.velocities(), grads, eta, mu)


def grad_check(net: Network, xs: np.ndarray, targets: np.ndarray,
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The denominator floor sits above the finite-difference noise level so
    coordinates whose true gradient is essentially zero compare on an
    absolute scale instead of amplifying rounding error.
    """
    analytic = backward(net, xs, targets)
    worst = 0.0
    for p, g in zip(net.params(), analytic):
        flat = p.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = mse_loss(net.forward(xs)[0], targets)
            flat[k] = orig - eps
            dn = mse_loss(net.forward(xs)[0], targets)
            flat[k] = orig
            num = (up - dn) / (2 * eps)
            ana = g.ravel()[k]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-5)
            worst = max(worst, rel)
    return worst
