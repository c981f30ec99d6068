"""Algorithm variants as feature toggles.

Every variant runs through the same state machines; the toggles select how
arrivals are aggregated and which protocol features are active. The ablation
variants differ from PR-FL by exactly one toggle each.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class VariantToggles:
    buffered: bool              # keep latest-model-per-client across rounds
    masked_aggregation: bool    # coverage-normalized masked average
    differential: bool          # shared delta packets counted once at the server
    recovery: bool              # density floor raises on accuracy stalls
    synchronous: bool           # barrier rounds instead of timed ticks
    pruning: bool               # density control active at all
    per_arrival: bool           # aggregate each upload immediately (no ticks)


VARIANTS: dict[str, VariantToggles] = {
    # full protocol: timed ticks over a buffered, masked, pruned population
    "PR-FL": VariantToggles(
        buffered=True, masked_aggregation=True, differential=True,
        recovery=True, synchronous=False, pruning=True, per_arrival=False),
    # dense synchronous baseline
    "FedAvg": VariantToggles(
        buffered=False, masked_aggregation=False, differential=False,
        recovery=False, synchronous=True, pruning=False, per_arrival=False),
    # dense per-arrival baseline
    "FedAsyn": VariantToggles(
        buffered=False, masked_aggregation=False, differential=False,
        recovery=False, synchronous=False, pruning=False, per_arrival=True),
    # dense tick baseline aggregating only the arrivals of each window
    "FedFix": VariantToggles(
        buffered=False, masked_aggregation=False, differential=False,
        recovery=False, synchronous=False, pruning=False, per_arrival=False),
    # ablations
    "syn-PR-FL": VariantToggles(
        buffered=True, masked_aggregation=True, differential=True,
        recovery=True, synchronous=True, pruning=True, per_arrival=False),
    "nobuff-PR-FL": VariantToggles(
        buffered=False, masked_aggregation=True, differential=True,
        recovery=True, synchronous=False, pruning=True, per_arrival=True),
    "fedavg-PR-FL": VariantToggles(
        buffered=True, masked_aggregation=False, differential=True,
        recovery=True, synchronous=False, pruning=True, per_arrival=False),
    "noRes-PR-FL": VariantToggles(
        buffered=True, masked_aggregation=True, differential=False,
        recovery=True, synchronous=False, pruning=True, per_arrival=False),
    "noRecover-PR-FL": VariantToggles(
        buffered=True, masked_aggregation=True, differential=True,
        recovery=False, synchronous=False, pruning=True, per_arrival=False),
}
