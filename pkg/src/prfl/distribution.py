"""Differential model distribution.

Clients with lower mask density get a prefix of what denser clients get:
because every mask is a top-k cut of the same global magnitude ranking, the
masks nest once clients are sorted by density. The server therefore encodes
one packet per client position holding only the coordinates that position
adds over the previous one, and client i downloads packets 1..i. Total
transmitted coordinates equal the largest mask's popcount instead of the sum
over clients.

Wire format, little endian: a 16 byte header (round u32, position u32,
entry count u32, reserved u32) followed by one (position u32, value f64)
pair per entry, 12 bytes each.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvariantError
from .model import Mask, ParamVector, apply_mask

HEADER_BYTES = 16
ENTRY_BYTES = 12
_HEADER = struct.Struct("<IIII")
_ENTRY_DTYPE = np.dtype([("pos", "<u4"), ("val", "<f8")])
assert _ENTRY_DTYPE.itemsize == ENTRY_BYTES


@dataclass
class DeltaPacket:
    """Sparse coordinate block for one position in the density order."""

    positions: np.ndarray
    values: np.ndarray
    position_in_order: int
    round: int = 0

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.uint32)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.positions.ndim != 1 or self.values.shape != self.positions.shape:
            raise ValueError("positions and values must be aligned 1-D arrays")
        if self.positions.size > 1 and not np.all(np.diff(self.positions.astype(np.int64)) > 0):
            raise ValueError("positions must be strictly increasing")
        if self.position_in_order < 1:
            raise ValueError("position_in_order is 1-based")
        if self.round < 0:
            raise ValueError("round must be non-negative")

    @property
    def nonzero_count(self) -> int:
        return int(self.positions.size)

    @property
    def byte_size(self) -> int:
        return HEADER_BYTES + ENTRY_BYTES * self.nonzero_count

    def to_bytes(self) -> bytes:
        body = np.empty(self.nonzero_count, dtype=_ENTRY_DTYPE)
        body["pos"] = self.positions
        body["val"] = self.values
        header = _HEADER.pack(self.round, self.position_in_order,
                              self.nonzero_count, 0)
        return header + body.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DeltaPacket":
        if len(blob) < HEADER_BYTES:
            raise ValueError("packet truncated: missing header")
        round_, pos_in_order, count, _reserved = _HEADER.unpack_from(blob)
        expected = HEADER_BYTES + ENTRY_BYTES * count
        if len(blob) != expected:
            raise ValueError(f"packet length {len(blob)} does not match header count {count}")
        body = np.frombuffer(blob, dtype=_ENTRY_DTYPE, count=count, offset=HEADER_BYTES)
        return cls(body["pos"].copy(), body["val"].copy(), pos_in_order, round_)


@dataclass
class IndexRange:
    """Which packet positions a client needs; lo is always 1."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo != 1:
            raise ValueError("packet ranges always start at position 1")
        if self.hi < self.lo:
            raise ValueError("empty packet range")


@dataclass
class SubmodelSet:
    """Masked copies of one global model, nested by construction."""

    submodels: list[ParamVector]
    masks: list[Mask]

    def __post_init__(self):
        if len(self.submodels) != len(self.masks) or not self.submodels:
            raise ValueError("need one mask per submodel")
        n = len(self.submodels[0])
        for sub, m in zip(self.submodels, self.masks):
            if len(sub) != n or len(m) != n:
                raise ValueError("submodels and masks must share one length")
        for i in range(len(self.masks) - 1):
            if not self.masks[i].subset_of(self.masks[i + 1]):
                raise InvariantError(
                    f"masks at positions {i + 1} and {i + 2} are not nested; "
                    "differential distribution requires masks cut from one "
                    "global ranking")


def build_submodels(global_model: ParamVector,
                    masks_by_client: Mapping[int, Mask]
                    ) -> tuple[SubmodelSet, list[int]]:
    """Sort clients by ascending mask density (ties by client id), mask the
    global model per client, and return the set plus the client order."""
    if not masks_by_client:
        raise ValueError("no client masks given")
    for cid, m in masks_by_client.items():
        if len(m) != len(global_model):
            raise ValueError(f"mask for client {cid} does not match the model length")
    order = sorted(masks_by_client, key=lambda cid: (masks_by_client[cid].popcount, cid))
    masks = [masks_by_client[cid] for cid in order]
    subs = [apply_mask(global_model, m) for m in masks]
    return SubmodelSet(subs, masks), order


def encode_deltas(sset: SubmodelSet, round_index: int = 0) -> list[DeltaPacket]:
    """One packet per position: the coordinates that position adds over the
    previous one. Supports are pairwise disjoint and sum to the largest
    mask's popcount."""
    packets = []
    prev_bits = np.zeros(len(sset.masks[0]), dtype=np.uint8)
    for i, (sub, m) in enumerate(zip(sset.submodels, sset.masks)):
        fresh = np.flatnonzero((m.bits == 1) & (prev_bits == 0))
        packets.append(DeltaPacket(fresh.astype(np.uint32), sub.values[fresh],
                                   position_in_order=i + 1, round=round_index))
        prev_bits = m.bits
    return packets


def index_for(order: Sequence[int], client_id: int) -> IndexRange:
    """Packet range for a client given the density order."""
    try:
        pos = list(order).index(client_id)
    except ValueError:
        raise KeyError(f"client {client_id} is not in the distribution order") from None
    return IndexRange(1, pos + 1)


def reconstruct(packets: Sequence[DeltaPacket], rng: IndexRange,
                shapes: Sequence[tuple[int, ...]]) -> ParamVector:
    """Scatter packets lo..hi into a zero vector; exact inverse of encoding."""
    if rng.hi > len(packets):
        raise LookupError(
            f"missing delta packets: need positions up to {rng.hi}, have {len(packets)}")
    shapes = tuple(tuple(int(d) for d in s) for s in shapes)
    n = sum(int(np.prod(s)) for s in shapes)
    vals = np.zeros(n)
    for i in range(rng.hi):
        p = packets[i]
        if p.position_in_order != i + 1:
            raise LookupError(
                f"packet at slot {i} claims position {p.position_in_order}")
        if p.positions.size and int(p.positions[-1]) >= n:
            raise ValueError("packet position beyond the model length")
        vals[p.positions] = p.values
    return ParamVector(vals, shapes)


def naive_coordinate_count(masks: Iterable[Mask]) -> int:
    """Coordinates sent if every client got its full submodel separately."""
    return sum(m.popcount for m in masks)


def naive_byte_count(masks: Iterable[Mask]) -> int:
    return sum(HEADER_BYTES + ENTRY_BYTES * m.popcount for m in masks)


def packet_coordinate_count(packets: Iterable[DeltaPacket]) -> int:
    return sum(p.nonzero_count for p in packets)


def packet_byte_count(packets: Iterable[DeltaPacket]) -> int:
    return sum(p.byte_size for p in packets)


def client_download_bytes(packets: Sequence[DeltaPacket], hi: int) -> int:
    """Bytes a client at position hi pulls: the non-empty packets among 1..hi.

    A position that adds no coordinates over the previous one is never
    transmitted; headers carry their position, so the receiver sees the gap
    and treats the skipped position as empty. Without this, clients whose
    masks tie would pay a header per duplicate rank.
    """
    if hi > len(packets):
        raise LookupError(f"missing delta packets: need {hi}, have {len(packets)}")
    return sum(p.byte_size for p in packets[:hi] if p.nonzero_count)
