"""Per-client density control.

A client's density is the fraction of the global model it trains. The
controller ranks clients by their mean recent round time and hands slower
clients proportionally smaller models, clamped to a per-client floor. When a
client's accuracy stalls, the floor is raised step by step until the client
is back to a full model, which is what lets a run end on a dense model.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import Mask, ParamVector


class NoHistoryError(LookupError):
    """The round-time queue is empty; callers fall back to density 1.0."""


@dataclass
class TimeQueue:
    """FIFO of recent round completion times in seconds."""

    capacity: int
    entries: deque = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        existing = list(self.entries) if self.entries is not None else []
        self.entries = deque(existing, maxlen=self.capacity)

    def push(self, t: float) -> None:
        t = float(t)
        if not (t > 0.0) or not math.isfinite(t):
            raise ValueError(f"round time must be positive and finite, got {t}")
        self.entries.append(t)

    def __len__(self) -> int:
        return len(self.entries)


def mean_round_time(q: TimeQueue) -> float:
    if not q.entries:
        raise NoHistoryError("client has no completed rounds yet")
    return float(sum(q.entries) / len(q.entries))


@dataclass
class DensityState:
    """Current density assignment and recovery floor for one client."""

    rho: float = 1.0
    rho_min: float = 0.1
    delta_rho: float = 0.2
    queue: TimeQueue = field(default_factory=lambda: TimeQueue(capacity=50))

    def __post_init__(self):
        if not 0.0 < self.rho_min <= 1.0:
            raise ValueError("rho_min must be in (0, 1]")
        if not 0.0 < self.delta_rho <= 1.0:
            raise ValueError("delta_rho must be in (0, 1]")
        if not self.rho_min <= self.rho <= 1.0:
            raise ValueError("rho must lie in [rho_min, 1]")

    def recover(self) -> None:
        """Raise the density floor by one increment.

        The new floor is the current density plus delta_rho, capped at 1;
        the assigned density is pulled up to the floor immediately. Floors
        never move down, so repeated stalls walk the client back to a dense
        model in at most ceil((1 - rho) / delta_rho) calls.
        """
        self.rho_min = min(self.rho + self.delta_rho, 1.0)
        self.rho = max(self.rho, self.rho_min)


def compute_density(all_means: Mapping[int, float], client_id: int,
                    state: DensityState) -> float:
    """Density for `client_id`: ratio of the fastest mean round time to this
    client's own, clamped to [state.rho_min, 1]. The fastest client always
    gets 1.0."""
    if not all_means:
        raise ValueError("no round-time means available")
    if client_id not in all_means:
        raise KeyError(f"client {client_id} has no round-time mean")
    for cid, m in all_means.items():
        if not (m > 0.0) or not math.isfinite(m):
            raise ValueError(f"mean round time for client {cid} must be positive")
    ratio = min(all_means.values()) / all_means[client_id]
    return min(1.0, max(ratio, state.rho_min))


def _kept_count(rho: float, n: int) -> int:
    # round before ceil so binary float noise in rho*n cannot inflate the count
    return min(n, int(math.ceil(round(rho * n, 6))))


def prune_to_density(w: ParamVector, rho: float, policy: str = "global") -> Mask:
    """Magnitude mask keeping a ceil(rho * len) share of coordinates.

    "global" ranks all coordinates together; "layer" keeps the same share
    inside every layer. Ties prefer the lower index, so the result is a pure
    function of the weights.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"density must be in (0, 1], got {rho}")
    v = w.values
    bits = np.zeros(v.size, dtype=np.uint8)
    if policy == "global":
        k = _kept_count(rho, v.size)
        order = np.argsort(-np.abs(v), kind="stable")
        bits[order[:k]] = 1
    elif policy == "layer":
        off = 0
        for layer in w.layers():
            n = layer.size
            seg = v[off:off + n]
            k = _kept_count(rho, n)
            order = np.argsort(-np.abs(seg), kind="stable")
            bits[off + order[:k]] = 1
            off += n
    else:
        raise ValueError(f"unknown pruning policy {policy!r}")
    return Mask(bits)


@dataclass
class EarlyStopper:
    """Patience-based stall detector over a stream of accuracy readings."""

    patience: int
    min_delta: float = 0.0
    best: float = float("-inf")
    stall_count: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be positive")
        if self.min_delta < 0.0:
            raise ValueError("min_delta must be non-negative")

    def observe(self, acc: float) -> bool:
        """Record a reading; True once patience readings in a row failed to
        beat the best by more than min_delta. The stopper re-arms after
        triggering so it can fire again later in the run."""
        if acc > self.best + self.min_delta:
            self.best = acc
            self.stall_count = 0
            return False
        self.stall_count += 1
        if self.stall_count >= self.patience:
            self.stall_count = 0
            return True
        return False


def should_terminate(densities: Mapping[int, float],
                     global_stopper_triggered: bool) -> bool:
    """The run may end only when every client is dense and the global model
    has stalled."""
    return bool(global_stopper_triggered) and all(
        d >= 1.0 for d in densities.values())
