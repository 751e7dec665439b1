import dataclasses
import hashlib

import numpy as np
import pytest

from pingnav.dynamics import transitions_to_arrays
from pingnav.experiments import (
    AdaptConfig,
    EvalConfig,
    NavConfig,
    StreamConfig,
    adaptation_experiment,
    anchor_indices,
    baseline_eval,
    build_bank,
    evaluate_prediction,
    hyper_search,
    large_deviations,
    load_full_bank,
    make_arena,
    navigation_experiment,
    new_walker_streams,
    run_adaptation,
    scheme_model,
    scripted_stream,
    source_profiles,
    turn_anchor_mask,
)
from pingnav.metrics import HORIZONS_S
from pingnav.neural import NetSpec, Network
from pingnav.planner import Episode, EpisodeRow
from pingnav.statespace import DT, ActionType
from pingnav.walkersim import PopulationSpec, WalkerProfile
from pingnav.world import load_map, plan_path

QUICK = AdaptConfig(adapt_duration_s=60.0, test_duration_s=120.0,
                    update_epochs=5)


def quick_stream(seed=0, duration_s=120.0):
    prof = source_profiles()["slow-cautious-left"]
    cfg = dataclasses.replace(StreamConfig(), duration_s=duration_s)
    return scripted_stream(prof, cfg, np.random.default_rng(seed))


def stream_digest(stream):
    h = hashlib.sha256()
    for arr in (stream.xy, stream.alpha, stream.beta, stream.s_hat_in,
                stream.action_vecs):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(str(len(stream.transitions)).encode())
    return h.hexdigest()


def test_scripted_stream_shapes():
    st = quick_stream()
    n = len(st.transitions)
    assert len(st) == n
    assert st.xy.shape == (n, 2)
    assert st.alpha.shape == (n,)
    assert st.action_vecs.shape[0] == n
    assert st.deliveries and st.deliveries[0][0] == 0.0


def test_scripted_stream_stays_in_arena():
    st = quick_stream(duration_s=300.0)
    ex, ey = st.floor.extent
    assert np.all(st.xy[:, 0] >= 0) and np.all(st.xy[:, 0] <= ex)
    assert np.all(st.xy[:, 1] >= 0) and np.all(st.xy[:, 1] <= ey)


def test_scripted_stream_deterministic():
    assert stream_digest(quick_stream(7)) == stream_digest(quick_stream(7))
    assert stream_digest(quick_stream(7)) != stream_digest(quick_stream(8))


class PlaybackOracle:
    """Replays the stream's own recorded targets, keyed by step index.

    With this model a rollout must land exactly on the logged trajectory,
    so any drift exposes a misalignment between anchors, action windows,
    hidden states, and truth slices.
    """

    def __init__(self, targets):
        self.targets = targets

    def init_state(self, batch=1):
        return np.zeros((batch, 1))

    def step(self, x, state):
        idx = state[:, 0].astype(int)
        return self.targets[idx], state + 1.0


def test_playback_oracle_rollout_is_exact():
    st = quick_stream(duration_s=180.0)
    _, targets = transitions_to_arrays(st.transitions)
    evals = evaluate_prediction(PlaybackOracle(targets), st, EvalConfig())
    assert len(evals) == 2 * len(HORIZONS_S)
    for ev in evals:
        if len(ev.epe):
            assert float(np.max(ev.epe)) < 1e-9
            assert float(np.max(ev.ade)) < 1e-9


def test_anchor_indices_stride():
    st = quick_stream()
    cfg = EvalConfig(anchor_stride=4)
    a = anchor_indices(st, cfg)
    assert a[0] == 0 and np.all(np.diff(a) == 4)
    assert a[-1] + round(20.0 / DT) <= len(st)


def test_anchor_indices_short_stream_raises():
    st = quick_stream(duration_s=15.0)
    with pytest.raises(ValueError, match="shorter than"):
        anchor_indices(st, EvalConfig())


def test_turn_anchor_mask_matches_log_scan():
    st = quick_stream(duration_s=300.0)
    cfg = EvalConfig()
    anchors = anchor_indices(st, cfg)
    mask = turn_anchor_mask(st, anchors, cfg.turn_window_s)
    turn_times = [t for t, a in st.deliveries if a.a_type is ActionType.TURN]
    assert turn_times, "stream never delivered a turn; raise duration"
    for j, flag in zip(anchors, mask):
        t = (j + 1) * DT
        near = any(td - cfg.turn_window_s <= t <= td for td in turn_times)
        assert flag == near


def test_adaptation_time_zero_scores_untrained_model():
    _, adapt, test = new_walker_streams(PopulationSpec(), QUICK, seed=3)
    model = scheme_model("scratch", None, np.random.default_rng(123))
    direct = evaluate_prediction(model, test, QUICK.eval)
    want = float(np.mean([e.epe for e in direct
                          if e.horizon_s == 20.0 and e.tag == "all"][0]))
    curve = adaptation_experiment("scratch", adapt, test, None, QUICK,
                                  np.random.default_rng(123))
    assert curve.at(0.0, 20.0).mean_epe == want


def test_adaptation_leaves_test_set_untouched():
    _, adapt, test = new_walker_streams(PopulationSpec(), QUICK, seed=3)
    before = stream_digest(test)
    curve = adaptation_experiment("scratch", adapt, test, None, QUICK,
                                  np.random.default_rng(0))
    assert stream_digest(test) == before
    n_batches = int(QUICK.adapt_duration_s // QUICK.batch_s)
    assert curve.times == [30.0 * k for k in range(n_batches + 1)]
    assert len(curve.points) == (n_batches + 1) * len(HORIZONS_S) * 2


def test_adaptation_rejects_short_adapt_stream():
    _, adapt, test = new_walker_streams(PopulationSpec(), QUICK, seed=3)
    short = dataclasses.replace(QUICK, adapt_duration_s=600.0)
    with pytest.raises(ValueError, match="need"):
        adaptation_experiment("scratch", adapt, test, None, short,
                              np.random.default_rng(0))


def test_adaptation_rejects_unknown_scheme():
    _, adapt, test = new_walker_streams(PopulationSpec(), QUICK, seed=3)
    with pytest.raises(ValueError, match="unknown scheme"):
        adaptation_experiment("oracle", adapt, test, None, QUICK,
                              np.random.default_rng(0))


def test_new_walker_streams_are_disjoint():
    _, adapt, test = new_walker_streams(PopulationSpec(), QUICK, seed=5)
    assert adapt.xy.shape != test.xy.shape or not np.allclose(
        adapt.xy, test.xy)
    assert len(adapt) * DT >= QUICK.adapt_duration_s
    assert len(test) * DT >= QUICK.test_duration_s - DT


def test_run_adaptation_shares_the_walker_across_schemes(small_bank):
    curves = run_adaptation(["scratch", "experts"], PopulationSpec(),
                            small_bank, QUICK, seed=2)
    assert [c.scheme for c in curves] == ["scratch", "experts"]
    for c in curves:
        assert c.times == [0.0, 30.0, 60.0]


def test_scheme_models_without_bank():
    rng = np.random.default_rng(0)
    assert scheme_model("scratch", None, rng) is not None
    with pytest.raises(ValueError, match="needs a pretrained bank"):
        scheme_model("experts", None, rng)


def test_bank_save_load_round_trip(small_bank, small_bank_dir):
    back = load_full_bank(small_bank_dir)
    assert sorted(back.experts) == sorted(small_bank.experts)
    for u, net in small_bank.experts.items():
        for p, q in zip(net.params(), back.experts[u].params()):
            assert np.array_equal(p, q)
    xs = np.zeros((3, 2, small_bank.agnostic.spec.input_size))
    ya, _ = small_bank.agnostic.forward(xs)
    yb, _ = back.agnostic.forward(xs)
    assert np.array_equal(ya, yb)
    assert sorted(back.multihead.heads) == sorted(small_bank.multihead.heads)
    assert back.multihead.active == small_bank.multihead.active


def test_baseline_eval_kinds():
    st = quick_stream(duration_s=180.0)
    for kind in ("constant-velocity", "kalman"):
        evals = baseline_eval(kind, st)
        assert {e.tag for e in evals} == {"all", "turn"}
        assert all(np.all(e.epe >= 0) for e in evals)
    with pytest.raises(ValueError, match="needs transitions"):
        baseline_eval("linear", st)
    fit = baseline_eval("linear", st, fit_transitions=st.transitions)
    assert len(fit) == 2 * len(HORIZONS_S)


def _episode_along(points):
    rows = [EpisodeRow(t=i * DT, x=x, y=y, alpha=0.0, est_x=x, est_y=y,
                       est_alpha=0.0, a_type="", a_dir="", a_amount="",
                       reward=0.0, wp_index=0, replan=0)
            for i, (x, y) in enumerate(points)]
    return Episode(rows=rows)


def test_large_deviations_counts_excursions():
    floor = load_map("maps/l_corridor.json")
    path = plan_path(floor.graph, 0, 2)
    (x0, y0) = path.polyline[0]
    on = (x0, y0)
    off = (x0 + 2.5, y0 + 2.5)
    pts = [on, on, off, off, off, on, off, off, on]
    count, dur = large_deviations(_episode_along(pts), path, threshold=1.5)
    assert count == 2
    assert dur == pytest.approx(5 * DT)


def test_large_deviations_clean_episode():
    floor = load_map("maps/l_corridor.json")
    path = plan_path(floor.graph, 0, 2)
    count, dur = large_deviations(_episode_along(path.polyline), path)
    assert count == 0 and dur == 0.0


def test_navigation_is_deterministic():
    pop = PopulationSpec()
    cfg = NavConfig(timeout_s=60.0)
    m1, eps1 = navigation_experiment("static", pop, 2, [0, 1], cfg=cfg)
    m2, eps2 = navigation_experiment("static", pop, 2, [0, 1], cfg=cfg)
    assert m1 == m2
    assert len(eps1) == 2
    assert [len(e.rows) for e in eps1] == [len(e.rows) for e in eps2]


def test_navigation_validates_arguments():
    with pytest.raises(ValueError, match="trials"):
        navigation_experiment("static", PopulationSpec(), 0, [])
    with pytest.raises(ValueError, match="seed"):
        navigation_experiment("static", PopulationSpec(), 2, [0])


COMPLIANT = PopulationSpec(reaction_mean=0.5, reaction_sd=0.0,
                           ack_mean=0.2, ack_sd=0.0,
                           turn_span_mean=2.0, turn_span_sd=0.0,
                           base_speed_range=(1.1, 1.2),
                           turn_speed_factor_range=(0.5, 0.6),
                           veer_rate_range=(0.0, 0.0),
                           overturn_bias_range=(0.0, 0.0))


@pytest.mark.slow
def test_easy_regime_reaches_goal_under_both_policies(small_bank):
    static, _ = navigation_experiment("static", COMPLIANT, 2, [0, 1])
    assert static.successes == static.trials
    adaptive, _ = navigation_experiment("experts", COMPLIANT, 2, [0, 1],
                                        bank=small_bank)
    assert adaptive.successes == adaptive.trials


def test_hyper_search_single_cell():
    st = quick_stream(duration_s=120.0)
    in_size = transitions_to_arrays(st.transitions)[0].shape[-1]
    spec = NetSpec(in_size, (10,), 3)
    best, rows = hyper_search([spec], st.transitions, seed=0, epochs=1,
                              window=20)
    assert best == spec
    assert len(rows) == 1


def test_hyper_search_prefers_trained_model():
    st = quick_stream(duration_s=240.0)
    in_size = transitions_to_arrays(st.transitions)[0].shape[-1]
    spec = NetSpec(in_size, (10,), 3)
    trained = Network(spec, np.random.default_rng(0))
    from pingnav.dynamics import train_network, windows_from_transitions
    xs, ts = windows_from_transitions(st.transitions, 20)
    train_network(trained, xs, ts, epochs=30)
    untrained = Network(spec, np.random.default_rng(1))
    best, rows = hyper_search([spec, spec], st.transitions, seed=0,
                              window=20, models={0: untrained, 1: trained})
    assert rows[1]["val_mse"] < rows[0]["val_mse"]
    assert len(rows) == 2


def test_hyper_search_empty_grid():
    st = quick_stream(duration_s=60.0)
    with pytest.raises(ValueError, match="empty"):
        hyper_search([], st.transitions, seed=0)


def test_make_arena_is_cached():
    assert make_arena(40.0) is make_arena(40.0)
