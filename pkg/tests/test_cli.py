import json

import pytest

from pingnav.cli import build_parser, main
from pingnav.metrics import read_curve_csv, read_nav_csv, read_result_csv
from pingnav.planner import Episode


def run(argv):
    return main(argv)


def test_gradcheck_passes(capsys):
    assert run(["gradcheck", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out


def test_seed_defaults_to_env(monkeypatch):
    monkeypatch.setenv("PING_SEED", "41")
    args = build_parser().parse_args(["gradcheck"])
    assert args.seed == 41
    monkeypatch.setenv("PING_SEED", "not-a-number")
    args = build_parser().parse_args(["gradcheck"])
    assert args.seed == 0


def test_unknown_scheme_is_rejected(tmp_path):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["adapt", "--scheme", "psychic",
                                   "--out", str(tmp_path / "x.csv")])


def test_adapt_is_byte_identical(tmp_path):
    argv = ["adapt", "--scheme", "scratch", "--seed", "7",
            "--adapt-s", "60", "--test-s", "120"]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(argv + ["--out", str(p1)]) == 0
    assert run(argv + ["--out", str(p2)]) == 0
    assert p1.read_bytes() == p2.read_bytes()
    curves, header = read_curve_csv(p1)
    assert header["seed"] == 7
    assert header["config"]["adapt_duration_s"] == 60.0
    assert curves[0].scheme == "scratch"
    assert curves[0].times == [0.0, 30.0, 60.0]


def test_adapt_with_bank_scheme(tmp_path, small_bank_dir):
    out = tmp_path / "experts.csv"
    argv = ["adapt", "--scheme", "experts", "--seed", "2",
            "--bank", str(small_bank_dir), "--adapt-s", "60",
            "--test-s", "120", "--out", str(out)]
    assert run(argv) == 0
    curves, header = read_curve_csv(out)
    assert curves[0].scheme == "experts"
    assert header["bank"]["users"]


def test_navigate_writes_logs_and_metrics(tmp_path):
    out = tmp_path / "nav"
    argv = ["navigate", "--policy", "static", "--trials", "3",
            "--seed", "0", "--timeout-s", "90", "--out-dir", str(out)]
    assert run(argv) == 0
    logs = sorted(out.glob("episode_*.csv"))
    assert len(logs) == 3
    rows = Episode.read_csv(logs[0])
    assert rows and rows[0].t == 0.0
    metrics, header = read_nav_csv(out / "metrics.csv")
    assert metrics[0].policy == "static"
    assert metrics[0].trials == 3
    assert header["seeds"] == [0, 1, 2]
    assert "timeout_s" in header["config"]


def test_navigate_is_deterministic(tmp_path):
    argv = ["navigate", "--policy", "static", "--trials", "2",
            "--seed", "5", "--timeout-s", "90"]
    d1, d2 = tmp_path / "n1", tmp_path / "n2"
    assert run(argv + ["--out-dir", str(d1)]) == 0
    assert run(argv + ["--out-dir", str(d2)]) == 0
    assert (d1 / "metrics.csv").read_bytes() == (d2 / "metrics.csv").read_bytes()
    assert (d1 / "episode_001.csv").read_bytes() == \
        (d2 / "episode_001.csv").read_bytes()


def test_predict_bench_table(tmp_path, small_bank_dir):
    out = tmp_path / "bench.csv"
    argv = ["predict-bench", "--seed", "1", "--bank", str(small_bank_dir),
            "--test-s", "240", "--out", str(out)]
    assert run(argv) == 0
    rows, header = read_result_csv(out)
    predictors = {r["predictor"] for r in rows}
    assert predictors == {"pooled-model", "linear", "constant-velocity",
                          "kalman"}
    assert len(rows) == 4 * 3 * 2
    assert header["command"] == "predict-bench"


def test_map_validate_good_and_bad(tmp_path, capsys):
    assert run(["map-validate", "maps/office.json",
                "maps/l_corridor.json"]) == 0
    assert "ok" in capsys.readouterr().out
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"resolution": 0.5, "width": 2}))
    assert run(["map-validate", str(bad)]) == 2
    assert "pingnav:" in capsys.readouterr().err


def test_missing_file_diagnostic(tmp_path, capsys):
    assert run(["map-validate", str(tmp_path / "absent.json")]) == 2
    err = capsys.readouterr().err
    assert "pingnav:" in err
