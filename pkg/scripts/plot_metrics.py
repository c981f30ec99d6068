#!/usr/bin/env python
"""Plot accuracy-over-time curves for one or more run directories.

Usage: python scripts/plot_metrics.py runs/PR-FL-s0 runs/FedAvg-s0 -o curves.png
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from prfl.metrics import read_metrics_csv


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("runs", nargs="+", help="run directories with metrics.csv")
    ap.add_argument("-o", "--out", default="curves.png")
    args = ap.parse_args()

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run in args.runs:
        reports = read_metrics_csv(Path(run) / "metrics.csv")
        ax.plot([r.sim_time for r in reports],
                [r.global_acc for r in reports],
                label=Path(run).name, linewidth=1.2)
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("test accuracy")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
