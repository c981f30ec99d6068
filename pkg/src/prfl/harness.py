"""Experiment runner: configs in, metrics files out.

A run directory holds three files: the resolved config (config.yaml), the
per-round metrics table (metrics.csv) and the run summary (summary.json).
Directories are only created once the configuration has validated, so a bad
config never leaves a half-made run behind.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, save_config
from .datagen import generate_dataset
from .metrics import (build_summary, read_metrics_csv, time_to_accuracy,
                      write_metrics_csv, write_summary)
from .model import Mask, TrainSpec, init_model, local_train, mlp_shapes, test_acc
from .config import make_lr_schedule
from .orchestrator import (RoundReport, RunResult, Simulation, _derived_seed,
                           _ROLE_INIT, _ROLE_TRAIN)


@dataclass
class ExperimentOutcome:
    cfg: RunConfig
    result: RunResult | None        # None on a dry run
    run_dir: Path | None


def _coerce_config(cfg: RunConfig | str | Path) -> RunConfig:
    if isinstance(cfg, RunConfig):
        return cfg.resolved()
    return load_config(cfg)


def run_experiment(cfg: RunConfig | str | Path, out: str | Path | None = None,
                   seed: int | None = None, variant: str | None = None,
                   name: str | None = None,
                   dry_run: bool = False) -> ExperimentOutcome:
    cfg = _coerce_config(cfg)
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if variant is not None:
        overrides["variant"] = variant
    if name is not None:
        overrides["name"] = name
    if out is not None:
        overrides["output"] = str(out)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides).resolved()
    if dry_run:
        return ExperimentOutcome(cfg, None, None)

    result = Simulation(cfg).run()
    run_dir = Path(cfg.output) / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.yaml")
    write_metrics_csv(result.reports, run_dir / "metrics.csv")
    write_summary(build_summary(cfg.name, cfg.variant, cfg.seed, result),
                  run_dir / "summary.json")
    return ExperimentOutcome(cfg, result, run_dir)


def centralized_reference(cfg: RunConfig, iterations: int = 400,
                          batch_size: int = 64) -> float:
    """Accuracy of one model trained on the pooled training data.

    Same task, same initialization, no federation; used as the yardstick for
    time-to-accuracy comparisons.
    """
    cfg = cfg.resolved()
    d = cfg.data
    total = cfg.clients * d.samples_per_client + d.test_samples
    full = generate_dataset(cfg.model.classes, cfg.model.features, total,
                            d.seed, separation=d.separation,
                            modes_per_class=d.modes_per_class, noise=d.noise)
    test = full.subset(np.arange(d.test_samples))
    pool = full.subset(np.arange(d.test_samples, total))
    shapes = mlp_shapes([cfg.model.features, *cfg.model.hidden,
                         cfg.model.classes])
    w = init_model(shapes, _derived_seed(cfg.seed, _ROLE_INIT))
    spec = TrainSpec(make_lr_schedule(cfg.train.lr_schedule), batch_size,
                     iterations)
    w = local_train(w, Mask.ones(len(w)), pool, spec, round_index=0,
                    seed=_derived_seed(cfg.seed, _ROLE_TRAIN))
    return test_acc(w, test)


def run_sweep(base: RunConfig | str | Path, variants: list[str],
              seeds: list[int], out: str | Path | None = None) -> dict:
    """Run every variant on every seed against the same task.

    The data seed follows the run seed (unless pinned in the config), so all
    variants at one seed see the same dataset, partition and initial model.
    Returns {variant: {seed: summary}} and writes an index next to the runs.
    """
    base = _coerce_config(base)
    if out is not None:
        base = dataclasses.replace(base, output=str(out)).resolved()
    index: dict[str, dict[str, dict]] = {}
    for variant in variants:
        index[variant] = {}
        for seed in seeds:
            outcome = run_experiment(base, seed=seed, variant=variant,
                                     name=f"{variant}-s{seed}")
            index[variant][str(seed)] = build_summary(
                outcome.cfg.name, variant, seed, outcome.result)
    root = Path(base.output)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.json", "w") as fh:
        json.dump(index, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return index


def collect_runs(root: str | Path, names: list[str]) -> dict[str, list[RoundReport]]:
    """Load the metrics of several runs; fails loudly with every absentee."""
    root = Path(root)
    missing = [n for n in names if not (root / n / "metrics.csv").exists()]
    if missing:
        raise FileNotFoundError(f"no metrics for runs: {missing} under {root}")
    return {n: read_metrics_csv(root / n / "metrics.csv") for n in names}


def compare_time_to_accuracy(runs: dict[str, list[RoundReport]],
                             threshold: float) -> dict[str, float | None]:
    return {name: time_to_accuracy(reports, threshold)
            for name, reports in runs.items()}


def format_comparison(times: dict[str, float | None],
                      threshold: float) -> str:
    lines = [f"time to reach accuracy {threshold:.3f} (simulated seconds)"]
    width = max(len(n) for n in times) if times else 0
    for name in sorted(times, key=lambda n: (times[n] is None, times[n])):
        t = times[name]
        lines.append(f"  {name:<{width}}  {'-' if t is None else format(t, '.2f')}")
    return "\n".join(lines)
