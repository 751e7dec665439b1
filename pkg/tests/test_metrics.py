import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pingnav.metrics import (
    AdaptationCurve,
    CurvePoint,
    NavMetrics,
    PredictionEval,
    ade,
    epe,
    read_curve_csv,
    read_nav_csv,
    read_result_csv,
    write_curve_csv,
    write_nav_csv,
    write_result_csv,
)


def test_epe_identical_is_zero():
    traj = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]])
    assert epe(traj, traj.copy()) == 0.0


def test_epe_three_four_five():
    pred = np.array([[9.0, 9.0], [0.0, 0.0]])
    truth = np.array([[9.0, 9.0], [3.0, 4.0]])
    assert epe(pred, truth) == pytest.approx(5.0)


def test_epe_length_mismatch_raises():
    with pytest.raises(ValueError, match="length mismatch"):
        epe(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        ade(np.zeros((2, 2)), np.zeros((5, 2)))


def test_ade_identical_is_zero():
    traj = np.array([[0.0, 1.0], [2.0, 2.0]])
    assert ade(traj, traj.copy()) == 0.0


def test_ade_constant_offset():
    truth = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    pred = truth + np.array([0.0, 1.0])
    assert ade(pred, truth) == pytest.approx(1.0)


def test_accepts_point_objects():
    class P:
        def __init__(self, x, y):
            self.x, self.y = x, y

    pts = [P(0.0, 0.0), P(1.0, 1.0)]
    arr = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert epe(pts, arr) == 0.0
    assert ade(pts, arr) == 0.0


coords = st.floats(min_value=-50, max_value=50, allow_nan=False)


@st.composite
def traj_pairs(draw):
    n = draw(st.integers(min_value=1, max_value=12))
    mk = lambda: np.array(
        [[draw(coords), draw(coords)] for _ in range(n)])
    return mk(), mk()


@given(traj_pairs(), st.floats(min_value=-math.pi, max_value=math.pi),
       coords, coords)
@settings(max_examples=60, deadline=None)
def test_rigid_motion_preserves_errors(pair, theta, dx, dy):
    pred, truth = pair
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    shift = np.array([dx, dy])
    p2, t2 = pred @ rot.T + shift, truth @ rot.T + shift
    assert epe(p2, t2) == pytest.approx(epe(pred, truth), abs=1e-8)
    assert ade(p2, t2) == pytest.approx(ade(pred, truth), abs=1e-8)


@given(traj_pairs())
@settings(max_examples=60, deadline=None)
def test_error_bounds_on_random_pairs(pair):
    pred, truth = pair
    step_d = np.hypot(*(pred - truth).T)
    assert ade(pred, truth) <= step_d.max() + 1e-12
    assert epe(pred, truth) <= step_d.max() + 1e-12


def test_prediction_eval_rejects_off_grid_horizon():
    with pytest.raises(ValueError, match="multiple"):
        PredictionEval(5.3, np.array([1.0]), np.array([1.0]))


def test_prediction_eval_rejects_negative_errors():
    with pytest.raises(ValueError, match="negative"):
        PredictionEval(5.0, np.array([-0.1]), np.array([0.1]))


def test_prediction_eval_steps():
    ev = PredictionEval(5.0, np.array([1.0]), np.array([0.5]), "turn")
    assert ev.steps == 10


def test_curve_timestamps_must_be_batch_aligned():
    good = CurvePoint(60.0, "scratch", 5.0, 1.0, 0.1, 0.8, 0.1)
    AdaptationCurve("scratch", [good])
    bad = CurvePoint(45.0, "scratch", 5.0, 1.0, 0.1, 0.8, 0.1)
    with pytest.raises(ValueError, match="multiples of 30"):
        AdaptationCurve("scratch", [bad])


def test_curve_point_rejects_unknown_scheme_and_tag():
    with pytest.raises(ValueError, match="scheme"):
        CurvePoint(0.0, "mystery", 5.0, 1.0, 0.1, 0.8, 0.1)
    with pytest.raises(ValueError, match="tag"):
        CurvePoint(0.0, "scratch", 5.0, 1.0, 0.1, 0.8, 0.1, "sometimes")


def test_nav_metrics_bounds():
    NavMetrics("static", 10, 10, 30.0, 0, 0.0)
    with pytest.raises(ValueError, match="successes"):
        NavMetrics("static", 10, 11, 30.0, 0, 0.0)
    with pytest.raises(ValueError, match="trials"):
        NavMetrics("static", 0, 0, 30.0, 0, 0.0)


def test_curve_csv_round_trip(tmp_path):
    pts = [CurvePoint(t, "experts", h, 1.25 + t / 100, 0.5, 1.0, 0.25, tag)
           for t in (0.0, 30.0, 60.0) for h in (5.0, 20.0)
           for tag in ("all", "turn")]
    curve = AdaptationCurve("experts", pts)
    path = tmp_path / "curve.csv"
    write_curve_csv(path, [curve], {"seed": 7, "config": {"batch_s": 30.0}})
    back, header = read_curve_csv(path)
    assert header == {"seed": 7, "config": {"batch_s": 30.0}}
    assert len(back) == 1 and back[0].scheme == "experts"
    assert back[0].points == pts


def test_curve_at_lookup():
    pts = [CurvePoint(0.0, "scratch", 5.0, 2.0, 0.1, 1.5, 0.1),
           CurvePoint(30.0, "scratch", 5.0, 1.0, 0.1, 0.7, 0.1)]
    curve = AdaptationCurve("scratch", pts)
    assert curve.at(30.0, 5.0).mean_epe == 1.0
    assert curve.times == [0.0, 30.0]
    with pytest.raises(KeyError):
        curve.at(90.0, 5.0)


def test_nav_csv_round_trip(tmp_path):
    m = [NavMetrics("static", 50, 41, 62.125, 30, 180.5),
         NavMetrics("experts", 50, 48, 58.5, 12, 40.25)]
    path = tmp_path / "nav.csv"
    write_nav_csv(path, m, {"seeds": [0, 1, 2]})
    back, header = read_nav_csv(path)
    assert back == m
    assert header == {"seeds": [0, 1, 2]}


def test_result_csv_floats_survive_exactly(tmp_path):
    rows = [{"a": repr(0.1 + 0.2), "b": "x"}]
    path = tmp_path / "r.csv"
    write_result_csv(path, ["a", "b"], rows, {"k": 1})
    back, header = read_result_csv(path)
    assert float(back[0]["a"]) == 0.1 + 0.2
    assert header["k"] == 1


def test_result_csv_is_deterministic(tmp_path):
    rows = [{"a": "1", "b": "2"}]
    p1, p2 = tmp_path / "x.csv", tmp_path / "y.csv"
    write_result_csv(p1, ["a", "b"], rows, {"z": 1, "alpha": [2, 3]})
    write_result_csv(p2, ["a", "b"], rows, {"alpha": [2, 3], "z": 1})
    assert p1.read_bytes() == p2.read_bytes()
