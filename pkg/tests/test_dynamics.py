import math

import numpy as np
import pytest

from pingnav.dynamics import (
    INPUT_SIZE,
    ExpertsModel,
    KalmanCV,
    LinearRegressor,
    MultiHeadModel,
    RolloutResult,
    StartBatch,
    baseline_predict,
    constant_velocity_predict,
    experts_predict,
    finetune_step,
    kalman_predict,
    load_bank,
    pack_input,
    param_checksum,
    person_spec,
    predict_step,
    pretrain,
    rollout,
    rollout_batch,
    save_bank,
    train_network,
    update_weights,
    windows_from_transitions,
)
from pingnav.neural import NetSpec, Network
from pingnav.statespace import (
    DT,
    FORWARD,
    Action,
    ActionType,
    Amount,
    Direction,
    FullState,
    HumanState,
    ReparamContext,
    ReparamState,
    Transition,
    encode_action,
)
from pingnav.world import SurroundState, load_map

EMPTY = SurroundState(np.zeros(24), np.zeros(96))
TURN_L = Action(ActionType.TURN, Direction.LEFT, Amount.FULL)


def cv_transitions(n, v=1.2, noise=0.0, rng=None):
    """Constant-velocity walker: perturbed motion pulled back to the nominal speed."""
    out = []
    nominal = ReparamState(v, 0.0, 0.0)
    for k in range(n):
        eps = rng.normal(0, noise, 3) if noise else np.zeros(3)
        s = ReparamState(v + eps[0], eps[1], eps[2])
        out.append(Transition(s, EMPTY, encode_action(FORWARD), nominal))
    return out


def small_spec(**kw):
    return NetSpec(INPUT_SIZE, (12,), 3, **kw)


class FuncExpert:
    """Stateless scripted expert with a fixed nonlinear response."""

    def __init__(self, fn):
        self.fn = fn

    def init_state(self, batch=1):
        return None

    def step(self, x, state):
        return self.fn(np.asarray(x)), None

    def forward(self, xs, state=None):
        xs = np.asarray(xs)
        ys = np.stack([self.fn(xs[t]) for t in range(xs.shape[0])])
        return ys, None

    def params(self):
        return []


def make_func_experts():
    # three distinct nonlinear responses; the stacked response columns must be
    # linearly independent and reasonably conditioned or the least-squares
    # comparison below has no unique answer
    def f0(x):
        s = x[..., :3]
        return np.stack([np.sin(s[..., 0]), 0.3 * s[..., 1] ** 2,
                         np.tanh(s[..., 2])], axis=-1)

    def f1(x):
        s = x[..., :3]
        return np.stack([np.cos(s[..., 0]), np.tanh(s[..., 1]),
                         0.4 * s[..., 2]], axis=-1)

    def f2(x):
        s = x[..., :3]
        return np.stack([np.sin(2.0 * s[..., 0]), np.cos(2.0 * s[..., 1]),
                         0.2 * s[..., 2] ** 2], axis=-1)

    return [FuncExpert(f0), FuncExpert(f1), FuncExpert(f2)]


def func_walker_transitions(fn, n, rng):
    out = []
    s = rng.uniform(-1, 1, 3)
    for k in range(n):
        if k % 12 == 0:  # re-excite so the stream explores the state space
            s = rng.uniform(-1.5, 1.5, 3)
        x = np.concatenate([s, np.zeros(120), encode_action(FORWARD)])
        s2 = fn(x)
        out.append(Transition(ReparamState(*s), EMPTY, encode_action(FORWARD),
                              ReparamState(*s2)))
        s = s2
    return out


def warm_hidden(net, s_hat, steps=10):
    # closed-loop accuracy needs the recurrent state past its start-up transient
    h = net.init_state(1)
    s = s_hat
    for _ in range(steps):
        s, h = predict_step(net, s_hat, EMPTY, FORWARD, h)
    return s, h


@pytest.fixture(scope="module")
def cv_model():
    """Model trained to convergence on a constant-velocity walker.

    Perturbed windows flatten the learned map around the fixed point (so
    closed-loop feedback does not amplify fit error) while exact windows pin
    the fixed point itself.
    """
    net = Network(NetSpec(INPUT_SIZE, (16,), 3), np.random.default_rng(100))
    xa, ta = windows_from_transitions(
        cv_transitions(240, noise=0.08, rng=np.random.default_rng(0)), window=60)
    xb, tb = windows_from_transitions(cv_transitions(240), window=60)
    xs = np.concatenate([xa, xb])
    ts = np.concatenate([ta, tb])
    for eta, epochs in ((1e-2, 400), (3e-3, 300), (1e-3, 300),
                        (3e-4, 300), (1e-4, 300)):
        train_network(net, xs, ts, epochs=epochs, eta=eta)
    return net


class TestPredictStep:
    def test_zero_weights_freeze_walker(self):
        net = Network(small_spec(), np.random.default_rng(0))
        for p in net.params():
            p[...] = 0.0
        s, _ = predict_step(net, ReparamState(1.0, 0.2, 0.1), EMPTY, FORWARD,
                            net.init_state(1))
        assert (s.rho, s.beta_dot, s.alpha_dot) == (0.0, 0.0, 0.0)

    def test_cv_trained_one_step(self, cv_model):
        s, _ = warm_hidden(cv_model, ReparamState(1.2, 0.0, 0.0))
        assert abs(s.rho - 1.2) < 0.01

    def test_deterministic(self):
        net = Network(small_spec(), np.random.default_rng(5))
        h = net.init_state(1)
        a, _ = predict_step(net, ReparamState(0.5, 0.1, -0.2), EMPTY, TURN_L, h)
        b, _ = predict_step(net, ReparamState(0.5, 0.1, -0.2), EMPTY, TURN_L, h)
        assert (a.rho, a.beta_dot, a.alpha_dot) == (b.rho, b.beta_dot, b.alpha_dot)

    def test_rho_clamped_nonnegative(self):
        net = Network(small_spec(), np.random.default_rng(0))
        for p in net.params():
            p[...] = 0.0
        net.head.b[...] = [-1.0, 0.5, 0.0]
        s, _ = predict_step(net, ReparamState(1.0, 0.0, 0.0), EMPTY, FORWARD,
                            net.init_state(1))
        assert s.rho == 0.0
        assert s.beta_dot == 0.5


class TestExpertsPredict:
    def test_block_average_init(self):
        rng = np.random.default_rng(1)
        em = ExpertsModel([Network(small_spec(), rng) for _ in range(3)], rng,
                          newcomer_spec=small_spec())
        x = pack_input(ReparamState(0.9, 0.1, 0.0), EMPTY, FORWARD)
        outs = [m.step(x[None], m.init_state(1))[0][0] for m in em.members]
        got, _ = em.step(x[None], em.init_state(1))
        assert got[0] == pytest.approx(np.mean(outs, axis=0), abs=1e-12)

    def test_single_expert_identity_combiner(self):
        rng = np.random.default_rng(2)
        expert = Network(small_spec(), rng)
        em = ExpertsModel([expert], rng, newcomer_spec=small_spec())
        em.combiner.w[...] = 0.0
        em.combiner.w[:, :3] = np.eye(3)  # expert block passes, newcomer gated out
        s_hat = ReparamState(1.1, -0.1, 0.2)
        want, _ = predict_step(expert, s_hat, EMPTY, FORWARD, expert.init_state(1))
        got, _ = experts_predict(em, s_hat, EMPTY, FORWARD, em.init_state(1))
        assert got.rho == pytest.approx(want.rho, abs=1e-12)
        assert got.beta_dot == pytest.approx(want.beta_dot, abs=1e-12)

    def test_empty_model_rejected(self):
        with pytest.raises(ValueError):
            ExpertsModel([], np.random.default_rng(0), include_newcomer=False)

    def test_adaptation_concentrates_on_matching_expert(self):
        rng = np.random.default_rng(3)
        experts = make_func_experts()
        for target in range(3):
            em = ExpertsModel(experts, np.random.default_rng(4),
                              include_newcomer=False)
            data = func_walker_transitions(experts[target].fn, 150,
                                           np.random.default_rng(50 + target))
            update_weights(em, data, eta=0.2, lam=0.0, epochs=3000)
            mass = [np.abs(em.combiner.w[:, 3 * k:3 * k + 3]).sum() for k in range(3)]
            assert int(np.argmax(mass)) == target


class TestUpdateWeights:
    def test_combiner_matches_ols_oracle(self):
        # scripted experts, no newcomer, lam = 0: the converged combiner must
        # equal the closed-form least-squares solution on the stacked outputs
        rng = np.random.default_rng(7)
        experts = make_func_experts()
        em = ExpertsModel(experts, rng, include_newcomer=False)
        data = func_walker_transitions(experts[1].fn, 120, rng)
        update_weights(em, data, eta=1.0, lam=0.0, epochs=20000)
        from pingnav.dynamics import transitions_to_arrays
        xs, ts = transitions_to_arrays(data)
        stacked = np.hstack([e.forward(xs)[0] for e in experts])
        w_ols, *_ = np.linalg.lstsq(stacked, ts, rcond=None)
        assert np.max(np.abs(em.combiner.w - w_ols.T)) < 1e-6

    def test_frozen_experts_unchanged(self):
        rng = np.random.default_rng(8)
        em = ExpertsModel([Network(small_spec(), rng) for _ in range(3)], rng,
                          newcomer_spec=small_spec())
        before = em.frozen_checksum()
        comb_before = em.combiner.w.copy()
        new_before = param_checksum(em.newcomer.params())
        for seed in range(3):
            update_weights(em, cv_transitions(40, noise=0.05,
                                              rng=np.random.default_rng(seed)),
                           epochs=5)
        assert em.frozen_checksum() == before
        assert param_checksum(em.newcomer.params()) != new_before
        assert not np.array_equal(em.combiner.w, comb_before)

    def test_huge_lambda_zeroes_the_update_target(self):
        rng = np.random.default_rng(9)
        em = ExpertsModel([Network(small_spec(), rng) for _ in range(2)], rng,
                          newcomer_spec=small_spec())
        update_weights(em, cv_transitions(30), eta=1e-2, lam=1e6, epochs=400, mu=0.0)
        assert np.abs(em.combiner.w).max() < 0.01
        s, _ = experts_predict(em, ReparamState(1.2, 0.0, 0.0), EMPTY, FORWARD,
                               em.init_state(1))
        assert abs(s.rho) < 0.05 and abs(s.alpha_dot) < 0.05

    def test_empty_batch_rejected(self):
        rng = np.random.default_rng(0)
        em = ExpertsModel([Network(small_spec(), rng)], rng,
                          newcomer_spec=small_spec())
        with pytest.raises(ValueError):
            update_weights(em, [])


@pytest.fixture()
def empty_plan(tmp_path):
    import json
    rows = ["0" * 80] * 80
    data = {"resolution": 0.5, "width": 80, "height": 80, "occupancy": rows,
            "landmarks": [],
            "graph": {"nodes": [{"id": 0, "x": 5.0, "y": 5.0},
                                {"id": 1, "x": 30.0, "y": 5.0}],
                      "edges": [[0, 1]]}}
    p = tmp_path / "empty.json"
    p.write_text(json.dumps(data))
    return load_map(p)


class TestRollout:
    def test_h1_equals_predict_integrate(self, cv_model, empty_plan):
        from pingnav.statespace import integrate
        pose = HumanState(10.0, 10.0, 0.3)
        s_hat = ReparamState(1.0, 0.1, 0.05)
        ctx = ReparamContext(0.25, DT)
        full = FullState(pose, EMPTY)
        res = rollout(cv_model, full, s_hat, [FORWARD], empty_plan, ctx=ctx)
        pred, _ = predict_step(cv_model, s_hat, EMPTY, FORWARD, cv_model.init_state(1))
        want_pose, _ = integrate(pred, pose, ctx)
        assert res.poses[0].x == pytest.approx(want_pose.x, abs=1e-12)
        assert res.poses[0].y == pytest.approx(want_pose.y, abs=1e-12)
        assert res.s_hats[0].rho == pytest.approx(pred.rho, abs=1e-12)

    def test_cv_straight_line_endpoint(self, cv_model, empty_plan):
        pose = HumanState(5.0, 20.0, 0.0)
        _, h = warm_hidden(cv_model, ReparamState(1.2, 0.0, 0.0))
        res = rollout(cv_model, FullState(pose, EMPTY), ReparamState(1.2, 0, 0),
                      [FORWARD] * 40, empty_plan, ctx=ReparamContext(0.0, DT),
                      hidden=h)
        end = res.poses[-1]
        assert math.hypot(end.x - (5.0 + 1.2 * DT * 40), end.y - 20.0) < 0.2

    def test_horizon_additivity_bitwise(self, cv_model, empty_plan):
        from pingnav.world import occupancy_features
        pose = HumanState(6.0, 6.0, 0.4)
        s_hat = ReparamState(1.0, 0.05, 0.02)
        full = rollout(cv_model, FullState(pose, occupancy_features(empty_plan, pose)),
                       s_hat, [FORWARD] * 40, empty_plan)
        first = rollout(cv_model, FullState(pose, occupancy_features(empty_plan, pose)),
                        s_hat, [FORWARD] * 20, empty_plan)
        mid = first.poses[-1]
        cont = rollout(cv_model, FullState(mid, occupancy_features(empty_plan, mid)),
                       first.s_hats[-1], [FORWARD] * 20, empty_plan,
                       ctx=first.ctx, hidden=first.hidden)
        for a, b in zip(full.poses[20:], cont.poses):
            assert (a.x, a.y, a.alpha) == (b.x, b.y, b.alpha)

    def test_rotation_equivariance_obstacle_free(self, empty_plan):
        net = Network(small_spec(), np.random.default_rng(11))
        s_hat = ReparamState(0.8, 0.1, -0.1)
        base_pose = HumanState(20.0, 20.0, 0.0)
        base = rollout(net, FullState(base_pose, EMPTY), s_hat, [FORWARD] * 15,
                       empty_plan)
        for phi in (0.7, -1.3, math.pi / 2):
            rot_pose = HumanState(20.0, 20.0, phi)
            rot = rollout(net, FullState(rot_pose, EMPTY), s_hat, [FORWARD] * 15,
                          empty_plan)
            c, s = math.cos(phi), math.sin(phi)
            for p, q in zip(base.poses, rot.poses):
                dx, dy = p.x - 20.0, p.y - 20.0
                assert q.x - 20.0 == pytest.approx(c * dx - s * dy, abs=1e-9)
                assert q.y - 20.0 == pytest.approx(s * dx + c * dy, abs=1e-9)

    def test_leaving_bounds_clamped_and_flagged(self, cv_model, empty_plan):
        pose = HumanState(38.0, 20.0, 0.0)  # 2 m from the east edge, walking east
        res = rollout(cv_model, FullState(pose, EMPTY), ReparamState(1.2, 0, 0),
                      [FORWARD] * 20, empty_plan)
        assert res.left_bounds
        assert all(p.x < 40.0 for p in res.poses)

    def test_rejects_empty_horizon(self, cv_model, empty_plan):
        with pytest.raises(ValueError):
            rollout(cv_model, FullState(HumanState(5, 5, 0), EMPTY),
                    ReparamState(1, 0, 0), [], empty_plan)
    def test_projection_stops_at_walls(self, cv_model, tmp_path):
        import json
        # wall column at x in [15.0, 15.5); walker commanded straight east
        rows = ["0" * 30 + "1" + "0" * 49 if 10 <= r < 70 else "0" * 80
                for r in range(80)]
        data = {"resolution": 0.5, "width": 80, "height": 80, "occupancy": rows,
                "landmarks": [],
                "graph": {"nodes": [{"id": 0, "x": 5.0, "y": 20.0},
                                    {"id": 1, "x": 10.0, "y": 20.0}],
                          "edges": [[0, 1]]}}
        p = tmp_path / "walled.json"
        p.write_text(json.dumps(data))
        plan = load_map(p)
        _, h = warm_hidden(cv_model, ReparamState(1.2, 0.0, 0.0))
        start = StartBatch(np.array([10.0]), np.array([20.0]), np.array([0.0]),
                           np.array([0.0]), np.array([[1.2, 0.0, 0.0]]))
        enc = np.stack([[encode_action(FORWARD)] * 30])
        raw = rollout_batch(cv_model, start, enc, plan, hidden=h)
        assert raw.x[0, -1] > 15.5  # pure integration walks through the wall
        _, h2 = warm_hidden(cv_model, ReparamState(1.2, 0.0, 0.0))
        proj = rollout_batch(cv_model, start, enc, plan, hidden=h2, project=True)
        assert proj.x[0].max() < 15.0
        assert all(plan.is_free(x, y) for x, y in zip(proj.x[0], proj.y[0]))



class TestPretrain:
    def test_expert_count_and_quality(self):
        rng = np.random.default_rng(20)
        datasets = {"u0": cv_transitions(120, v=0.8),
                    "u1": cv_transitions(120, v=1.6)}
        experts = pretrain("experts", datasets, rng, spec=small_spec(), epochs=250)
        assert sorted(experts) == ["u0", "u1"]
        from pingnav.dynamics import transitions_to_arrays
        xs, ts = transitions_to_arrays(datasets["u0"])
        ys, _ = experts["u0"].forward(xs)
        assert np.mean((ys - ts) ** 2) < 1e-3

    def test_agnostic_improves(self):
        rng = np.random.default_rng(21)
        datasets = {"u0": cv_transitions(60, v=0.9), "u1": cv_transitions(60, v=1.4)}
        net = Network(small_spec(), rng)
        xs0, ts0 = windows_from_transitions(datasets["u0"])
        xs1, ts1 = windows_from_transitions(datasets["u1"])
        xs = np.concatenate([xs0, xs1], axis=1)
        ts = np.concatenate([ts0, ts1], axis=1)
        losses = train_network(net, xs, ts, epochs=40)
        assert losses[-1] < losses[0]

    def test_multihead_routing_and_freezing(self):
        rng = np.random.default_rng(22)
        datasets = {"u0": cv_transitions(60, v=0.8), "u1": cv_transitions(60, v=1.6)}
        mh = pretrain("multihead", datasets, rng,
                      spec=NetSpec(INPUT_SIZE, (10,), 3), epochs=30)
        assert set(mh.heads) == {"u0", "u1"}
        old_sums = {u: param_checksum(mh.heads[u].params()) for u in ("u0", "u1")}
        mh.add_head("new", rng)
        for _ in range(5):
            finetune_step(mh, cv_transitions(30, v=1.2))
        for u in ("u0", "u1"):
            assert param_checksum(mh.heads[u].params()) == old_sums[u]
        assert mh.active == "new"

    def test_finetune_deterministic(self):
        rng = np.random.default_rng(23)
        net = Network(small_spec(), rng)
        twin = net.clone()
        batch = cv_transitions(40, v=1.1)
        for _ in range(3):
            finetune_step(net, batch)
            finetune_step(twin, batch)
        for a, b in zip(net.params(), twin.params()):
            assert np.array_equal(a, b)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            pretrain("experts", {}, np.random.default_rng(0))
        with pytest.raises(ValueError):
            pretrain("experts", {"u": []}, np.random.default_rng(0))
        with pytest.raises(ValueError):
            pretrain("nonsense", {"u": cv_transitions(60)}, np.random.default_rng(0))
        with pytest.raises(ValueError):
            finetune_step(Network(small_spec(), np.random.default_rng(0)), [])


class TestBaselines:
    def test_cv_straight_exact(self):
        hist = [HumanState(0.5 * k, 1.0, 0.0) for k in range(5)]
        pred = constant_velocity_predict(hist, 4)
        for k, p in enumerate(pred, start=1):
            assert p.x == pytest.approx(2.0 + 1.0 * DT * k, abs=1e-12)
            assert p.y == 1.0

    def test_kalman_converges_on_noiseless_line(self):
        hist = [HumanState(0.6 * DT * k, 2.0, 0.0) for k in range(40)]
        pred = kalman_predict(hist, 10)
        assert pred[-1].x == pytest.approx(hist[-1].x + 0.6 * DT * 10, abs=0.05)
        assert pred[-1].y == pytest.approx(2.0, abs=0.02)

    def test_kalman_hand_transcript(self):
        # one predict/update cycle with literal matrix arithmetic
        dt, q, r = 0.5, 0.4, 2.0
        kf = KalmanCV(0.0, 0.0, dt=dt, q_var=q, r_var=r, p0_pos=2.0, p0_vel=10.0)
        kf.predict()
        P1 = np.array([
            [2.0 + 10.0 * dt * dt + q * dt ** 4 / 4, 0.0, 10.0 * dt + q * dt ** 3 / 2, 0.0],
            [0.0, 2.0 + 10.0 * dt * dt + q * dt ** 4 / 4, 0.0, 10.0 * dt + q * dt ** 3 / 2],
            [10.0 * dt + q * dt ** 3 / 2, 0.0, 10.0 + q * dt * dt, 0.0],
            [0.0, 10.0 * dt + q * dt ** 3 / 2, 0.0, 10.0 + q * dt * dt]])
        assert np.allclose(kf.P, P1, atol=1e-10)
        assert np.allclose(kf.m, 0.0, atol=1e-10)
        z = np.array([1.0, -1.0])
        kf.update(z)
        s = P1[0, 0] + r
        k_pos, k_vel = P1[0, 0] / s, P1[2, 0] / s
        m2 = np.array([k_pos * 1.0, k_pos * -1.0, k_vel * 1.0, k_vel * -1.0])
        assert np.allclose(kf.m, m2, atol=1e-10)
        P2_00 = (1 - k_pos) * P1[0, 0]
        P2_20 = -k_vel * P1[0, 0] + P1[2, 0]
        assert kf.P[0, 0] == pytest.approx(P2_00, abs=1e-10)
        assert kf.P[2, 0] == pytest.approx(P2_20, abs=1e-10)

    def test_history_too_short(self):
        with pytest.raises(ValueError):
            constant_velocity_predict([HumanState(0, 0, 0)], 5)
        with pytest.raises(ValueError):
            kalman_predict([HumanState(0, 0, 0)], 5)
        with pytest.raises(ValueError):
            baseline_predict("nonsense", [HumanState(0, 0, 0)] * 3, 5)

    def test_linear_regressor_recovers_linear_map(self):
        rng = np.random.default_rng(30)
        A = np.array([[0.9, 0.1, 0.0], [0.0, 0.8, 0.05], [0.1, 0.0, 0.7]])
        trans = []
        for _ in range(200):
            s = rng.uniform(-1, 1, 3)
            s2 = A @ s
            trans.append(Transition(ReparamState(*s), EMPTY,
                                    encode_action(FORWARD), ReparamState(*s2)))
        lr = LinearRegressor().fit(trans)
        x = pack_input(ReparamState(0.3, -0.2, 0.5), EMPTY, FORWARD)
        y, _ = lr.step(x[None], None)
        assert y[0] == pytest.approx(A @ np.array([0.3, -0.2, 0.5]), abs=1e-6)

    def test_linear_regressor_unfitted(self):
        with pytest.raises(ValueError):
            LinearRegressor().step(np.zeros((1, INPUT_SIZE)), None)
        with pytest.raises(ValueError):
            LinearRegressor().fit([])


class TestBankIO:
    def test_roundtrip_and_checksums(self, tmp_path):
        rng = np.random.default_rng(40)
        experts = {"a": Network(small_spec(), rng), "b": Network(small_spec(), rng)}
        save_bank(tmp_path / "bank", experts, seed=40)
        back, manifest = load_bank(tmp_path / "bank")
        assert manifest["users"] == ["a", "b"]
        for u in experts:
            for p, q in zip(experts[u].params(), back[u].params()):
                assert np.array_equal(p, q)

    def test_corruption_detected(self, tmp_path):
        rng = np.random.default_rng(41)
        save_bank(tmp_path / "bank", {"a": Network(small_spec(), rng)}, seed=41)
        path = tmp_path / "bank" / "a.json"
        import json
        blob = json.loads(path.read_text())
        key = sorted(blob["params"])[0]
        blob["params"][key]["data"][0] += 1.0
        path.write_text(json.dumps(blob))
        with pytest.raises(ValueError, match="checksum"):
            load_bank(tmp_path / "bank")


def test_windows_shapes():
    xs, ts = windows_from_transitions(cv_transitions(130), window=60)
    assert xs.shape == (60, 2, INPUT_SIZE)
    assert ts.shape == (60, 2, 3)
    with pytest.raises(ValueError):
        windows_from_transitions(cv_transitions(10), window=60)
