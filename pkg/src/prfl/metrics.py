"""Metrics serialization and run analysis.

Files are written so that two runs with the same configuration and seed are
byte-identical: floats go through repr (shortest round-trip form), rows end
with a plain newline, JSON keys are sorted, and nothing records wall-clock
time.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .orchestrator import PerClientStats, RoundReport, RunResult

_BASE_COLUMNS = ["round", "sim_time", "global_acc"]
_CLIENT_COLUMNS = ["density", "rounds", "staleness", "bytes_up", "bytes_down"]


def _num(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(int(x))


def csv_header(num_clients: int) -> list[str]:
    cols = list(_BASE_COLUMNS)
    for i in range(num_clients):
        cols.extend(f"c{i}_{name}" for name in _CLIENT_COLUMNS)
    return cols


def write_metrics_csv(reports: list[RoundReport], path: str | Path) -> None:
    if not reports:
        raise ValueError("no reports to write")
    n_clients = len(reports[0].per_client)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(n_clients))
        for r in reports:
            row = [str(r.round), repr(float(r.sim_time)), repr(float(r.global_acc))]
            for pc in r.per_client:
                row.extend([repr(float(pc.density)), str(pc.rounds_completed),
                            str(pc.staleness_age), str(pc.bytes_up),
                            str(pc.bytes_down)])
            w.writerow(row)


def read_metrics_csv(path: str | Path) -> list[RoundReport]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"empty metrics file: {path}")
    header = rows[0]
    n_clients = (len(header) - len(_BASE_COLUMNS)) // len(_CLIENT_COLUMNS)
    if csv_header(n_clients) != header:
        raise ValueError(f"unrecognized metrics header in {path}")
    out = []
    for row in rows[1:]:
        per = []
        for i in range(n_clients):
            off = len(_BASE_COLUMNS) + i * len(_CLIENT_COLUMNS)
            per.append(PerClientStats(density=float(row[off]),
                                      rounds_completed=int(row[off + 1]),
                                      staleness_age=int(row[off + 2]),
                                      bytes_up=int(row[off + 3]),
                                      bytes_down=int(row[off + 4])))
        out.append(RoundReport(round=int(row[0]), sim_time=float(row[1]),
                               global_acc=float(row[2]), per_client=per))
    return out


def build_summary(name: str, variant: str, seed: int, result: RunResult) -> dict:
    return {
        "name": name,
        "variant": variant,
        "seed": seed,
        "rounds": result.rounds,
        "sim_time": result.sim_time,
        "final_acc": result.final_acc,
        "termination": result.termination,
        "server_tx_bytes": result.server_tx_bytes,
        "server_rx_bytes": result.server_rx_bytes,
    }


def write_summary(summary: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")


def time_to_accuracy(reports: list[RoundReport], threshold: float) -> float | None:
    """Simulated time of the first report at or above the threshold, or None
    if the run never got there."""
    for r in reports:
        if r.global_acc >= threshold:
            return r.sim_time
    return None


def accuracy_at_time(reports: list[RoundReport], t: float) -> float:
    """Accuracy of the last report at or before time t (0.0 before the
    first report)."""
    acc = 0.0
    for r in reports:
        if r.sim_time <= t:
            acc = r.global_acc
        else:
            break
    return acc
