"""Virtual-clock network and event machinery.

Speeds are MB/s (1 MB = 1e6 bytes), payloads are bytes, times are seconds.
A transfer completes when the slower side has moved every byte, so its rate
is min(sender upload, receiver download), and the server side of the link is
split evenly among the transfers it is serving in that direction. Each
transfer samples one lognormal fluctuation multiplier per endpoint at start;
the fair share itself is recomputed whenever a transfer starts or finishes.

Events at the same instant resolve by kind (transfers before training
completions before aggregation ticks) and then by insertion order, which
keeps whole runs deterministic.
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterator, Mapping, Optional

import numpy as np

from .errors import InvariantError

MEGABYTE = 1_000_000.0


class SimulationComplete(Exception):
    """advance() was called on an empty event queue."""


class EventKind(IntEnum):
    TRANSFER_DONE = 0
    TRAIN_DONE = 1
    AGG_TICK = 2


@dataclass
class Endpoint:
    """One side of the network: nominal speeds plus fluctuation spread."""

    upload_speed: float
    download_speed: float
    fluctuation_sigma: float = 0.0

    def __post_init__(self):
        if self.upload_speed <= 0 or self.download_speed <= 0:
            raise ValueError("endpoint speeds must be positive")
        if self.fluctuation_sigma < 0:
            raise ValueError("fluctuation sigma must be non-negative")


@dataclass
class Transfer:
    payload_bytes: int
    sender: int | str
    receiver: int | str
    start_time: float = float("nan")
    finish_time: float = float("nan")

    def __post_init__(self):
        if self.payload_bytes < 0:
            raise ValueError("payload must be non-negative")


@dataclass
class SimEvent:
    time: float
    kind: EventKind
    client: int = -1
    transfer_id: int = -1
    version: int = 0
    transfer: Optional[Transfer] = None


class EventQueue:
    """Deterministic priority queue over (time, kind, insertion order)."""

    def __init__(self):
        self._heap: list[tuple[float, int, int, SimEvent]] = []
        self._seq = 0
        self.now = 0.0

    def push(self, ev: SimEvent) -> None:
        if ev.time < self.now:
            raise InvariantError(
                f"event at t={ev.time} scheduled before the clock t={self.now}")
        heapq.heappush(self._heap, (ev.time, int(ev.kind), self._seq, ev))
        self._seq += 1

    def advance(self) -> SimEvent:
        if not self._heap:
            raise SimulationComplete("event queue drained")
        t, _, _, ev = heapq.heappop(self._heap)
        self.now = t
        return ev

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)


def sample_speed(base: float, sigma: float,
                 rng: Optional[np.random.Generator] = None) -> float:
    """Nominal speed times exp(N(0, sigma)). sigma = 0 returns base exactly,
    so the closed-form timing identities hold without jitter."""
    if base <= 0:
        raise ValueError("base speed must be positive")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0.0 or rng is None:
        return float(base)
    return float(base * math.exp(rng.normal(0.0, sigma)))


def effective_rate(sender_speed: float, receiver_speed: float,
                   receiver_load: int = 1, sender_load: int = 1) -> float:
    """Bottleneck rate in MB/s with each loaded side split evenly."""
    if receiver_load < 1 or sender_load < 1:
        raise ValueError("loads count the transfer itself, so they are >= 1")
    return min(sender_speed / sender_load, receiver_speed / receiver_load)


def schedule_transfer(queue: EventQueue, transfer: Transfer, sender: Endpoint,
                      receiver: Endpoint, server_load: int = 1,
                      rng: Optional[np.random.Generator] = None) -> SimEvent:
    """One-shot transfer scheduling against a fixed receiver-side load.

    Samples both endpoint speeds once, takes the bottleneck rate with the
    receiver (server) capacity divided by server_load, and enqueues the
    completion event at now + payload / rate. Zero payloads complete
    immediately.
    """
    up = sample_speed(sender.upload_speed, sender.fluctuation_sigma, rng)
    down = sample_speed(receiver.download_speed, receiver.fluctuation_sigma, rng)
    rate = effective_rate(up, down, receiver_load=server_load)
    duration = 0.0
    if transfer.payload_bytes > 0:
        duration = transfer.payload_bytes / (rate * MEGABYTE)
    transfer.start_time = queue.now
    transfer.finish_time = queue.now + duration
    ev = SimEvent(time=transfer.finish_time, kind=EventKind.TRANSFER_DONE,
                  transfer=transfer)
    queue.push(ev)
    return ev


def aggregation_tick_times(t_first: float, delta_t: float,
                           t_merge: float = 0.0) -> Iterator[float]:
    """Aggregation instants: the first tick, then fixed delta_t + t_merge
    spacing forever."""
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    if t_merge < 0:
        raise ValueError("t_merge must be non-negative")
    t = float(t_first)
    while True:
        yield t
        t += delta_t + t_merge


@dataclass
class _Flow:
    flow_id: int
    direction: str            # "up" client->server, "down" server->client
    client: int
    payload_bytes: int
    remaining: float          # bytes
    client_cap: float         # bytes/s, sampled once at start
    server_cap: float         # bytes/s, sampled once; split by the live count
    last_update: float
    transfer: Transfer
    rate: float = 0.0
    version: int = 0


class FairShareNetwork:
    """Fluid model of one server exchanging models with many clients.

    Every active transfer in a direction gets an equal share of the server's
    capacity in that direction; the client side caps each flow individually.
    Shares are recomputed on every start and finish, and completion events
    carry a version stamp so superseded ones are dropped on arrival.
    """

    def __init__(self, queue: EventQueue, server: Endpoint,
                 clients: Mapping[int, Endpoint],
                 rng: Optional[np.random.Generator] = None):
        self.queue = queue
        self.server = server
        self.clients = dict(clients)
        self.rng = rng
        self._flows: Dict[int, _Flow] = {}
        self._active: Dict[str, list[int]] = {"up": [], "down": []}
        self._next_id = 0
        self.bytes_up: Dict[int, int] = defaultdict(int)
        self.bytes_down: Dict[int, int] = defaultdict(int)

    def active_count(self, direction: str) -> int:
        return len(self._active[direction])

    def start(self, direction: str, client: int, payload_bytes: int) -> int:
        """Begin a transfer and return its flow id. Completion arrives as a
        TRANSFER_DONE event on the shared queue."""
        if direction not in ("up", "down"):
            raise ValueError(f"unknown direction {direction!r}")
        ep = self.clients[client]
        if direction == "up":
            client_cap = sample_speed(ep.upload_speed, ep.fluctuation_sigma, self.rng)
            server_cap = sample_speed(self.server.download_speed,
                                      self.server.fluctuation_sigma, self.rng)
            transfer = Transfer(int(payload_bytes), sender=client, receiver="server")
        else:
            client_cap = sample_speed(ep.download_speed, ep.fluctuation_sigma, self.rng)
            server_cap = sample_speed(self.server.upload_speed,
                                      self.server.fluctuation_sigma, self.rng)
            transfer = Transfer(int(payload_bytes), sender="server", receiver=client)
        transfer.start_time = self.queue.now
        flow = _Flow(self._next_id, direction, client, int(payload_bytes),
                     float(payload_bytes), client_cap * MEGABYTE,
                     server_cap * MEGABYTE, self.queue.now, transfer)
        self._next_id += 1
        self._flows[flow.flow_id] = flow
        self._active[direction].append(flow.flow_id)
        self._reshare(direction)
        return flow.flow_id

    def _reshare(self, direction: str) -> None:
        now = self.queue.now
        ids = self._active[direction]
        if not ids:
            return
        n = len(ids)
        for fid in ids:
            f = self._flows[fid]
            if f.rate > 0.0 and now > f.last_update:
                f.remaining = max(0.0, f.remaining - f.rate * (now - f.last_update))
            f.last_update = now
        for fid in ids:
            f = self._flows[fid]
            f.rate = min(f.client_cap, f.server_cap / n)
            f.version += 1
            finish = now if f.remaining <= 0.0 else now + f.remaining / f.rate
            self.queue.push(SimEvent(time=finish, kind=EventKind.TRANSFER_DONE,
                                     client=f.client, transfer_id=f.flow_id,
                                     version=f.version, transfer=f.transfer))

    def complete(self, ev: SimEvent) -> Optional[_Flow]:
        """Resolve a TRANSFER_DONE event. Returns the finished flow, or None
        when the event was superseded by a reshare."""
        f = self._flows.get(ev.transfer_id)
        if f is None or ev.version != f.version:
            return None
        del self._flows[ev.transfer_id]
        self._active[f.direction].remove(ev.transfer_id)
        f.remaining = 0.0
        f.transfer.finish_time = ev.time
        if f.direction == "up":
            self.bytes_up[f.client] += f.payload_bytes
        else:
            self.bytes_down[f.client] += f.payload_bytes
        self._reshare(f.direction)
        return f
