"""Server-side buffer and aggregation rules.

The buffer keeps the latest returned model per client; each record also
carries when it was dispatched, so weights can discount stale models. Two
aggregators operate on a buffer:

- mask_fed_avg: per-coordinate weighted average normalized by how much mask
  weight covered that coordinate, falling back to the previous global value
  where nobody covered it, then blended with the previous model. This is the
  model that gets distributed.
- fed_avg: plain weighted average. Used for accuracy testing only; it is
  never distributed because it drags pruned coordinates toward zero.

All accumulation walks clients in ascending id order so results are bitwise
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import InvariantError
from .model import ParamVector, mask_of
from .pruning import TimeQueue


@dataclass
class ClientRecord:
    """Latest state returned by one client."""

    model: ParamVector
    dispatch_round: int
    arrival_time: float
    round_time: float
    queue: TimeQueue
    density: float = 1.0


@dataclass
class ServerBuffer:
    """Latest-model-per-client buffer plus the server round counter."""

    records: Dict[int, ClientRecord] = field(default_factory=dict)
    round: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def client_ids(self) -> list[int]:
        return sorted(self.records)


def update_buffer(buf: ServerBuffer, client_id: int,
                  rec: ClientRecord) -> ServerBuffer:
    """Insert or overwrite a client's record and log its round time.

    A model can never come from the future, and its support can never exceed
    the density it was dispatched with (plus the ceil slack of one
    coordinate).
    """
    if rec.dispatch_round > buf.round:
        raise InvariantError(
            f"client {client_id} model dispatched in round {rec.dispatch_round} "
            f"but the server is at round {buf.round}")
    n = len(rec.model)
    support = mask_of(rec.model).density
    if support > rec.density + 1.0 / n + 1e-12:
        raise InvariantError(
            f"client {client_id} returned support {support:.6f} above its "
            f"assigned density {rec.density:.6f}")
    rec.queue.push(rec.round_time)
    buf.records[client_id] = rec
    return buf


@dataclass
class StalenessWeights:
    """Normalized per-client aggregation weights."""

    weights: Dict[int, float]

    def __post_init__(self):
        if not self.weights:
            raise ValueError("weights cannot be empty")
        total = 0.0
        for cid in sorted(self.weights):
            w = self.weights[cid]
            if not w > 0.0:
                raise ValueError(f"weight for client {cid} must be positive")
            total += w
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total!r}")


def staleness_weights(buf: ServerBuffer, beta: float) -> StalenessWeights:
    """Freshness scores (1 + age)^(-beta) normalized over the buffer, where
    age is how many rounds ago the model was dispatched. beta = 0 gives
    uniform weights."""
    if not buf.records:
        raise ValueError("cannot weight an empty buffer")
    if beta < 0.0:
        raise ValueError("beta must be non-negative")
    scores: Dict[int, float] = {}
    for cid in sorted(buf.records):
        age = 1.0 + buf.round - buf.records[cid].dispatch_round
        if age < 1.0:
            raise InvariantError(f"negative staleness for client {cid}")
        scores[cid] = age ** (-beta)
    total = 0.0
    for cid in sorted(scores):
        total += scores[cid]
    return StalenessWeights({cid: scores[cid] / total for cid in sorted(scores)})


def _check_cover(buf: ServerBuffer, wts: StalenessWeights) -> None:
    if set(wts.weights) != set(buf.records):
        raise ValueError("weights must cover exactly the buffered clients")


def fed_avg(buf: ServerBuffer, wts: StalenessWeights) -> ParamVector:
    """Plain weighted average of the buffered models."""
    _check_cover(buf, wts)
    cids = buf.client_ids()
    template = buf.records[cids[0]].model
    acc = np.zeros(len(template))
    for cid in cids:
        model = buf.records[cid].model
        if len(model) != len(template):
            raise ValueError("buffered models differ in length")
        acc = acc + wts.weights[cid] * model.values
    return template.like(acc)


def mask_fed_avg(buf: ServerBuffer, prev: ParamVector, wts: StalenessWeights,
                 eta_g: float = 1.0) -> ParamVector:
    """Coverage-normalized masked average blended with the previous model.

    Per coordinate: accumulate weighted values and weighted mask bits; where
    any mask weight landed, the candidate is value_sum / mask_sum, otherwise
    the coordinate keeps its previous value exactly. The result is
    (1 - eta_g) * prev + eta_g * candidate, with uncovered coordinates
    carried over untouched so no part of the model is ever lost.
    """
    _check_cover(buf, wts)
    if not 0.0 < eta_g <= 1.0:
        raise ValueError("eta_g must be in (0, 1]")
    w_acc = np.zeros(len(prev))
    m_acc = np.zeros(len(prev))
    for cid in buf.client_ids():
        model = buf.records[cid].model
        if len(model) != len(prev):
            raise ValueError("buffered model length does not match the global model")
        weight = wts.weights[cid]
        w_acc = w_acc + weight * model.values
        m_acc = m_acc + weight * mask_of(model).bits
    covered = m_acc != 0.0
    candidate = prev.values.copy()
    candidate[covered] = w_acc[covered] / m_acc[covered]
    out = (1.0 - eta_g) * prev.values + eta_g * candidate
    out[~covered] = prev.values[~covered]
    return prev.like(out)
