"""Command line front end for the experiment harness.

Subcommands cover the full workflow: pretrain source models, run the
adaptation study, run the navigation benchmark, compare predictors
against non-neural baselines, sanity-check gradients, and validate map
files.  Every run is seeded; the PING_SEED environment variable supplies
the default when --seed is not given.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .metrics import write_curve_csv, write_nav_csv, write_result_csv
from .neural import NetSpec, Network, grad_check
from .walkersim import PopulationSpec
from .world import MapValidationError, load_map

GRAD_TOL = 1e-4

BANK_SCHEMES = ("finetune", "finetune-mh", "experts", "experts-ns")


def _default_seed() -> int:
    try:
        return int(os.environ.get("PING_SEED", "0"))
    except ValueError:
        return 0


def _get_bank(args) -> ex.PretrainedBank:
    if args.bank:
        return ex.load_full_bank(args.bank)
    print("pingnav: no --bank given, pretraining source models first "
          "(slow; use `pingnav pretrain` to cache them)", file=sys.stderr)
    return ex.build_bank(args.seed)


def cmd_pretrain(args) -> int:
    bank = ex.build_bank(args.seed, duration_s=args.duration_s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ex.save_full_bank(out, bank)
    print(f"wrote {len(bank.experts)} experts + 2 pooled models to {out}")
    return 0


def cmd_adapt(args) -> int:
    cfg = ex.AdaptConfig(batch_s=args.batch_s, adapt_duration_s=args.adapt_s,
                         test_duration_s=args.test_s)
    bank = _get_bank(args) if args.scheme in BANK_SCHEMES else None
    curves = ex.run_adaptation([args.scheme], PopulationSpec(), bank, cfg,
                               args.seed)
    header = {"command": "adapt", "scheme": args.scheme, "seed": args.seed,
              "config": cfg.to_dict(),
              "bank": bank.manifest if bank else None}
    write_curve_csv(args.out, curves, header)
    print(f"wrote {args.out}")
    return 0


def cmd_navigate(args) -> int:
    cfg = ex.NavConfig(timeout_s=args.timeout_s)
    bank = _get_bank(args) if args.policy in BANK_SCHEMES else None
    seeds = list(range(args.seed, args.seed + args.trials))
    metrics, episodes = ex.navigation_experiment(args.policy,
                                                 ex.NAV_POPULATION,
                                                 args.trials, seeds, bank, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, ep in enumerate(episodes):
        ep.write_csv(out / f"episode_{i:03d}.csv")
    header = {"command": "navigate", "policy": args.policy, "seeds": seeds,
              "config": cfg.to_dict(),
              "bank": bank.manifest if bank else None}
    write_nav_csv(out / "metrics.csv", [metrics], header)
    print(f"{metrics.successes}/{metrics.trials} reached the goal; "
          f"wrote {out / 'metrics.csv'}")
    return 0


def cmd_predict_bench(args) -> int:
    bank = _get_bank(args)
    cfg = ex.AdaptConfig(test_duration_s=args.test_s)
    _, adapt_stream, test_stream = ex.new_walker_streams(PopulationSpec(), cfg,
                                                         args.seed)
    evcfg = cfg.eval
    scored = {"pooled-model": ex.evaluate_prediction(bank.agnostic,
                                                     test_stream, evcfg)}
    for kind in ("linear", "constant-velocity", "kalman"):
        scored[kind] = ex.baseline_eval(kind, test_stream, evcfg,
                                        fit_transitions=adapt_stream.transitions)
    rows = []
    for name, evals in scored.items():
        for e in evals:
            m_epe, s_epe = ex._mean_sd(e.epe)
            m_ade, s_ade = ex._mean_sd(e.ade)
            rows.append({"predictor": name, "T": e.horizon_s,
                         "mean_epe": repr(m_epe), "sd_epe": repr(s_epe),
                         "mean_ade": repr(m_ade), "sd_ade": repr(s_ade),
                         "event_tag": e.tag})
    header = {"command": "predict-bench", "seed": args.seed,
              "config": cfg.to_dict(), "bank": bank.manifest}
    fields = ["predictor", "T", "mean_epe", "sd_epe", "mean_ade", "sd_ade",
              "event_tag"]
    write_result_csv(args.out, fields, rows, header)
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    net = Network(NetSpec(input_size=7, hidden_sizes=(5,), output_size=3), rng)
    xs = rng.normal(size=(4, 3, 7))
    ts = rng.normal(size=(4, 3, 3))
    err = grad_check(net, xs, ts)
    print(f"max relative error: {err:.3e}")
    return 0 if err <= GRAD_TOL else 1


def cmd_map_validate(args) -> int:
    for path in args.paths:
        floor = load_map(path)
        print(f"{path}: ok ({floor.width}x{floor.height} cells, "
              f"{len(floor.graph.nodes)} graph nodes)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pingnav",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=_default_seed(),
                        help="RNG seed (default: $PING_SEED or 0)")

    sp = sub.add_parser("pretrain", help="simulate source users and train "
                        "the expert bank plus pooled models")
    seeded(sp)
    sp.add_argument("--out", required=True, help="directory for model files")
    sp.add_argument("--duration-s", type=float, default=600.0,
                    help="length of each source user's stream")
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("adapt", help="run one adaptation study and write "
                        "the error-vs-time curve")
    seeded(sp)
    sp.add_argument("--scheme", required=True, choices=ex.SCHEMES)
    sp.add_argument("--out", required=True, help="curve CSV path")
    sp.add_argument("--bank", help="directory from `pretrain`")
    sp.add_argument("--batch-s", type=float, default=30.0)
    sp.add_argument("--adapt-s", type=float, default=480.0)
    sp.add_argument("--test-s", type=float, default=600.0)
    sp.set_defaults(fn=cmd_adapt)

    sp = sub.add_parser("navigate", help="run guided navigation trials and "
                        "write per-episode logs plus summary metrics")
    seeded(sp)
    sp.add_argument("--policy", required=True,
                    choices=("static",) + ex.SCHEMES)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--bank", help="directory from `pretrain`")
    sp.add_argument("--timeout-s", type=float,
                    default=ex.NavConfig.timeout_s)
    sp.set_defaults(fn=cmd_navigate)

    sp = sub.add_parser("predict-bench", help="score the pooled model "
                        "against linear, constant-velocity, and Kalman "
                        "baselines on a fresh walker")
    seeded(sp)
    sp.add_argument("--out", required=True, help="table CSV path")
    sp.add_argument("--bank", help="directory from `pretrain`")
    sp.add_argument("--test-s", type=float, default=600.0)
    sp.set_defaults(fn=cmd_predict_bench)

    sp = sub.add_parser("gradcheck", help="compare backprop gradients "
                        "against central differences on a small network")
    seeded(sp)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("map-validate", help="load map files and report "
                        "schema or invariant violations")
    sp.add_argument("paths", nargs="+", metavar="MAP")
    sp.set_defaults(fn=cmd_map_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (MapValidationError, FileNotFoundError, ValueError) as e:
        print(f"pingnav: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
