"""Trajectory error measures and experiment result records.

EPE is the straight-line distance between the endpoints of a predicted and
a true trajectory; ADE averages the per-step distances.  The record types
here are what the experiment runners emit and the CSV files round-trip.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .statespace import DT

HORIZONS_S = (5.0, 10.0, 20.0)
SCHEMES = ("scratch", "finetune", "finetune-mh", "experts", "experts-ns")
EVENT_TAGS = ("all", "turn")

CURVE_FIELDS = ["batch_time_s", "scheme", "T", "mean_epe", "sd_epe",
                "mean_ade", "sd_ade", "event_tag"]
NAV_FIELDS = ["policy", "trials", "successes", "mean_time_to_goal_s",
              "deviation_count", "deviation_duration_s"]


def _as_xy(traj) -> np.ndarray:
    """Accept a (N, 2+) array or a sequence of objects with .x/.y."""
    if isinstance(traj, np.ndarray):
        return traj[:, :2].astype(np.float64)
    if len(traj) and hasattr(traj[0], "x"):
        return np.array([[p.x, p.y] for p in traj], dtype=np.float64)
    return np.asarray(traj, dtype=np.float64)[:, :2]


def epe(pred, truth) -> float:
    """End-point displacement: distance between the final positions."""
    p, t = _as_xy(pred), _as_xy(truth)
    if len(p) != len(t):
        raise ValueError(f"length mismatch: {len(p)} vs {len(t)}")
    if len(p) < 1:
        raise ValueError("need at least one point")
    return float(np.hypot(*(p[-1] - t[-1])))


def ade(pred, truth) -> float:
    """Average displacement: mean per-step distance between trajectories."""
    p, t = _as_xy(pred), _as_xy(truth)
    if len(p) != len(t):
        raise ValueError(f"length mismatch: {len(p)} vs {len(t)}")
    if len(p) < 1:
        raise ValueError("need at least one point")
    d = p - t
    return float(np.mean(np.hypot(d[:, 0], d[:, 1])))


@dataclass(frozen=True)
class PredictionEval:
    """Per-anchor errors of one model at one horizon, under one event tag."""

    horizon_s: float
    epe: np.ndarray
    ade: np.ndarray
    tag: str = "all"

    def __post_init__(self):
        n = round(self.horizon_s / DT)
        if abs(n * DT - self.horizon_s) > 1e-9 or n < 1:
            raise ValueError(f"horizon {self.horizon_s} is not a positive "
                             f"multiple of the {DT} s tick")
        if len(self.epe) and (np.min(self.epe) < 0 or np.min(self.ade) < 0):
            raise ValueError("displacement errors cannot be negative")

    @property
    def steps(self) -> int:
        return round(self.horizon_s / DT)


def _mean_sd(v: np.ndarray) -> tuple[float, float]:
    if len(v) == 0:
        return math.nan, math.nan
    return float(np.mean(v)), float(np.std(v))


@dataclass(frozen=True)
class CurvePoint:
    """One row of an adaptation curve: errors after batch_time_s of data."""

    batch_time_s: float
    scheme: str
    horizon_s: float
    mean_epe: float
    sd_epe: float
    mean_ade: float
    sd_ade: float
    event_tag: str = "all"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.event_tag not in EVENT_TAGS:
            raise ValueError(f"unknown event tag {self.event_tag!r}")


@dataclass
class AdaptationCurve:
    scheme: str
    points: list[CurvePoint] = field(default_factory=list)

    def __post_init__(self):
        for p in self.points:
            if p.batch_time_s % 30.0 != 0.0:
                raise ValueError("curve timestamps must be multiples of 30 s")

    def at(self, batch_time_s: float, horizon_s: float, tag: str = "all"
           ) -> CurvePoint:
        for p in self.points:
            if (p.batch_time_s == batch_time_s and p.horizon_s == horizon_s
                    and p.event_tag == tag):
                return p
        raise KeyError((batch_time_s, horizon_s, tag))

    @property
    def times(self) -> list[float]:
        return sorted({p.batch_time_s for p in self.points})


@dataclass(frozen=True)
class NavMetrics:
    """Aggregate outcome of repeated guided episodes under one policy."""

    policy: str
    trials: int
    successes: int
    mean_time_to_goal_s: float
    deviation_count: int
    deviation_duration_s: float

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0 <= self.successes <= self.trials:
            raise ValueError("successes must lie in [0, trials]")


# ---- CSV persistence ----
#
# Every results file starts with '#'-prefixed header lines carrying the
# resolved config and seeds, so a file is self-describing and two runs with
# the same inputs are byte-identical.


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_result_csv(path, fieldnames: Sequence[str], rows: Sequence[dict],
                     header: dict) -> None:
    with open(path, "w", newline="") as f:
        for k in sorted(header):
            f.write(f"# {k}: {json.dumps(header[k], sort_keys=True)}\n")
        w = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in fieldnames})


def read_result_csv(path) -> tuple[list[dict], dict]:
    header: dict = {}
    body: list[str] = []
    with open(path) as f:
        for line in f:
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                header[k.strip()] = json.loads(v)
            else:
                body.append(line)
    rows = list(csv.DictReader(body))
    return rows, header


def write_curve_csv(path, curves: Sequence[AdaptationCurve], header: dict) -> None:
    rows = [{"batch_time_s": p.batch_time_s, "scheme": p.scheme,
             "T": p.horizon_s, "mean_epe": p.mean_epe, "sd_epe": p.sd_epe,
             "mean_ade": p.mean_ade, "sd_ade": p.sd_ade,
             "event_tag": p.event_tag}
            for c in curves for p in c.points]
    write_result_csv(path, CURVE_FIELDS, rows, header)


def read_curve_csv(path) -> tuple[list[AdaptationCurve], dict]:
    rows, header = read_result_csv(path)
    by_scheme: dict[str, list[CurvePoint]] = {}
    for r in rows:
        p = CurvePoint(float(r["batch_time_s"]), r["scheme"], float(r["T"]),
                       float(r["mean_epe"]), float(r["sd_epe"]),
                       float(r["mean_ade"]), float(r["sd_ade"]), r["event_tag"])
        by_scheme.setdefault(p.scheme, []).append(p)
    return [AdaptationCurve(s, pts) for s, pts in by_scheme.items()], header


def write_nav_csv(path, metrics: Sequence[NavMetrics], header: dict) -> None:
    rows = [{"policy": m.policy, "trials": m.trials, "successes": m.successes,
             "mean_time_to_goal_s": m.mean_time_to_goal_s,
             "deviation_count": m.deviation_count,
             "deviation_duration_s": m.deviation_duration_s} for m in metrics]
    write_result_csv(path, NAV_FIELDS, rows, header)


def read_nav_csv(path) -> tuple[list[NavMetrics], dict]:
    rows, header = read_result_csv(path)
    out = [NavMetrics(r["policy"], int(r["trials"]), int(r["successes"]),
                      float(r["mean_time_to_goal_s"]), int(r["deviation_count"]),
                      float(r["deviation_duration_s"])) for r in rows]
    return out, header
