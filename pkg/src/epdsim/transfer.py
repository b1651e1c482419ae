"""Cross-stage data movement models.

Covers the hash-keyed feature store with deduplication and fault-injected
misses, prefetch overlap accounting for encoder-to-prefill transfers, and the
grouped layer-wise transmission timeline for prefill-to-decode cache
movement.
"""

from __future__ import annotations

import io
import math
import random
from dataclasses import dataclass, field
from enum import Enum

from .kernels import best_group, kv_exposed_busy


@dataclass
class StoreEntry:
    feature_bytes: int
    producer_instance: int
    ready_time: float  # ms; may be in the future while the producer runs


class PutResult(str, Enum):
    INSERTED = "inserted"
    DEDUPLICATED = "deduplicated"


@dataclass
class FeatureStore:
    entries: dict[int, StoreEntry] = field(default_factory=dict)
    dedup_hits: int = 0
    misses: int = 0

    def put(self, content_hash: int, feature_bytes: int, producer_instance: int,
            ready_time: float) -> PutResult:
        """First put inserts; later puts of the same hash only count a dedup hit."""
        if feature_bytes < 0:
            raise ValueError("feature_bytes must be >= 0")
        if content_hash in self.entries:
            self.dedup_hits += 1
            return PutResult.DEDUPLICATED
        self.entries[content_hash] = StoreEntry(feature_bytes, producer_instance, ready_time)
        return PutResult.INSERTED

    def mark_ready(self, content_hash: int, ready_time: float) -> None:
        self.entries[content_hash].ready_time = ready_time

    def get(self, content_hash: int, failure_prob: float = 0.0,
            rng: random.Random | None = None) -> StoreEntry | None:
        """Lookup with optional fault injection; a miss triggers recomputation upstream."""
        if not 0.0 <= failure_prob <= 1.0:
            raise ValueError("failure_prob must be in [0, 1]")
        entry = self.entries.get(content_hash)
        if entry is None:
            self.misses += 1
            return None
        if failure_prob > 0.0:
            draw = rng.random() if rng is not None else random.random()
            if draw < failure_prob:
                self.misses += 1
                return None
        return entry


@dataclass(frozen=True)
class PrefetchPlan:
    transfer_latency: float
    overlap_window: float

    @property
    def exposed(self) -> float:
        return max(0.0, self.transfer_latency - self.overlap_window)

    @property
    def overlap_ratio(self) -> float:
        if self.transfer_latency <= 0.0:
            return 1.0
        return min(1.0, self.overlap_window / self.transfer_latency)


def plan_prefetch(transfer_latency: float, overlap_window: float) -> PrefetchPlan:
    """Overlap accounting for a feature transfer hidden behind scheduling delay."""
    if transfer_latency < 0 or overlap_window < 0:
        raise ValueError("latencies must be >= 0")
    return PrefetchPlan(transfer_latency, overlap_window)


@dataclass(frozen=True)
class KvTransferPlan:
    layers: int
    group_size: int
    per_layer_compute: float
    per_layer_payload: float
    handshake: float
    schedule: tuple[tuple[float, float, float], ...]  # (ready, start, end) per group


@dataclass(frozen=True)
class TransferOutcome:
    total_link_busy: float
    exposed: float
    bandwidth_utilization: float  # bytes/ms over the span the link was held

    @property
    def overlap_ratio(self) -> float:
        if self.total_link_busy <= 0.0:
            return 1.0
        return 1.0 - self.exposed / self.total_link_busy


def kv_timeline(layers: int, group_size: int, per_layer_compute: float,
                per_layer_payload: float, handshake: float,
                payload_bytes: float = 0.0) -> tuple[KvTransferPlan, TransferOutcome]:
    """Build the serialized-link schedule for grouped layer-wise transmission.

    Group k is ready when its last layer's compute finishes; the link carries
    one group at a time, so a group starts at max(its ready time, previous
    group's end).  Exposed time is whatever extends past the end of compute.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if not 1 <= group_size <= layers:
        raise ValueError(f"group_size must be in [1, {layers}], got {group_size}")
    if min(per_layer_compute, per_layer_payload, handshake) < 0:
        raise ValueError("times must be >= 0")

    schedule = []
    prev_end = 0.0
    first = 0
    while first < layers:
        size = min(group_size, layers - first)
        ready = (first + size) * per_layer_compute
        duration = handshake + size * per_layer_payload
        start = max(ready, prev_end)
        prev_end = start + duration
        schedule.append((ready, start, prev_end))
        first += size

    exposed, busy, last_end = kv_exposed_busy(
        layers, group_size, per_layer_compute, per_layer_payload, handshake)
    span = last_end - schedule[0][1]
    bandwidth = payload_bytes / span if span > 0 else 0.0
    plan = KvTransferPlan(layers, group_size, per_layer_compute,
                          per_layer_payload, handshake, tuple(schedule))
    outcome = TransferOutcome(total_link_busy=busy, exposed=exposed,
                              bandwidth_utilization=bandwidth)
    return plan, outcome


def choose_group_size(layers: int, per_layer_compute: float,
                      per_layer_payload: float, handshake: float) -> int:
    """Group size minimizing exposed time; exhaustive, ties toward smaller sizes."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if min(per_layer_compute, per_layer_payload, handshake) < 0:
        raise ValueError("times must be >= 0")
    g, _ = best_group(layers, per_layer_compute, per_layer_payload, handshake)
    return g


def overlap_metrics(total_link_busy: float, exposed: float) -> float:
    """Fraction of link time hidden behind computation: 1 - exposed/total."""
    if exposed < 0 or total_link_busy < 0:
        raise ValueError("times must be >= 0")
    if exposed > total_link_busy:
        raise ValueError(f"exposed ({exposed}) cannot exceed total ({total_link_busy})")
    if total_link_busy == 0.0:
        return 1.0
    return 1.0 - exposed / total_link_busy


def schedule_to_csv(plan: KvTransferPlan) -> str:
    """Schedule as CSV (group, ready_ms, start_ms, end_ms) for Gantt plotting."""
    out = io.StringIO()
    out.write("group,ready_ms,start_ms,end_ms\n")
    for idx, (ready, start, end) in enumerate(plan.schedule):
        out.write(f"{idx},{ready:.6f},{start:.6f},{end:.6f}\n")
    return out.getvalue()
