"""Command-line entry points.

prfl run      --config cfg.yaml [--seed N] [--variant V] [--out DIR] [--dry-run]
prfl sweep    --config cfg.yaml --variants A,B --seeds 0,1 [--out DIR] [--threshold T]
prfl validate --config cfg.yaml

Exit codes: 0 success, 2 configuration error, 3 protocol invariant violation.
"""

from __future__ import annotations

import argparse
import sys

from .config import dumps_config, load_config
from .errors import ConfigError, InvariantError
from .harness import (compare_time_to_accuracy, format_comparison,
                      run_experiment, run_sweep)
from .metrics import time_to_accuracy


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prfl",
                                description="asynchronous federated learning "
                                            "simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one run")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--variant", default=None)
    run.add_argument("--name", default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--dry-run", action="store_true",
                     help="validate and print the resolved config, run nothing")

    sweep = sub.add_parser("sweep", help="run several variants x seeds")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--variants", required=True,
                       help="comma-separated variant names")
    sweep.add_argument("--seeds", required=True,
                       help="comma-separated integer seeds")
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--threshold", type=float, default=None,
                       help="report time-to-accuracy at this test accuracy")

    val = sub.add_parser("validate", help="check a config file")
    val.add_argument("--config", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            load_config(args.config)
            print(f"ok: {args.config}")
            return 0
        if args.command == "run":
            outcome = run_experiment(args.config, out=args.out, seed=args.seed,
                                     variant=args.variant, name=args.name,
                                     dry_run=args.dry_run)
            if args.dry_run:
                print(dumps_config(outcome.cfg), end="")
                return 0
            r = outcome.result
            print(f"{outcome.cfg.variant} seed={outcome.cfg.seed}: "
                  f"{r.rounds} rounds, sim time {r.sim_time:.2f}s, "
                  f"final acc {r.final_acc:.4f} ({r.termination})")
            print(f"wrote {outcome.run_dir}")
            return 0
        if args.command == "sweep":
            variants = [v.strip() for v in args.variants.split(",") if v.strip()]
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            if not variants or not seeds:
                raise ConfigError("sweep needs at least one variant and one seed")
            index = run_sweep(args.config, variants, seeds, out=args.out)
            for variant in variants:
                for seed in seeds:
                    s = index[variant][str(seed)]
                    print(f"{variant} seed={seed}: rounds={s['rounds']} "
                          f"final_acc={s['final_acc']:.4f} ({s['termination']})")
            if args.threshold is not None:
                from .harness import collect_runs
                base = load_config(args.config)
                root = args.out if args.out is not None else base.output
                names = [f"{v}-s{s}" for v in variants for s in seeds]
                times = compare_time_to_accuracy(collect_runs(root, names),
                                                 args.threshold)
                print(format_comparison(times, args.threshold))
            return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except InvariantError as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 3
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
