"""Modality-aware routing and least-loaded instance selection.

Requests with any non-text input run the full encode-prefill-decode path;
text-only requests skip straight to prefill.  A status table tracks per
instance queue depth and queued tokens, refreshed on every enqueue/dequeue.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import RoutingError
from .topology import Deployment, Stage
from .workload import Request


class LoadMetric(str, Enum):
    QUEUED_REQUESTS = "queued_requests"
    QUEUED_TOKENS = "queued_tokens"


@dataclass
class InstanceStatus:
    instance_id: int
    stages: tuple[Stage, ...]
    queued_requests: int = 0
    queued_tokens: int = 0
    active: bool = False
    last_update: float = 0.0

    def load(self, metric: LoadMetric) -> int:
        if metric == LoadMetric.QUEUED_REQUESTS:
            return self.queued_requests
        return self.queued_tokens


@dataclass(frozen=True)
class Route:
    path: tuple[Stage, ...]


def route(request: Request) -> Route:
    """E-P-D for requests with a non-text modality, P-D otherwise."""
    if request.is_multimodal:
        return Route(path=(Stage.ENCODE, Stage.PREFILL, Stage.DECODE))
    return Route(path=(Stage.PREFILL, Stage.DECODE))


class StatusTable:
    """Global view of instance load; owned by a single simulation run."""

    def __init__(self, deployment: Deployment):
        self.statuses: dict[int, InstanceStatus] = {
            inst.id: InstanceStatus(instance_id=inst.id, stages=inst.stages)
            for inst in deployment.instances
        }

    def select_instance(self, stage: Stage, metric: LoadMetric) -> int:
        """Least-loaded capable instance; ties break to the lowest id."""
        best_id, best_load = -1, None
        for inst_id in sorted(self.statuses):
            status = self.statuses[inst_id]
            if stage not in status.stages:
                continue
            load = status.load(metric)
            if best_load is None or load < best_load:
                best_id, best_load = inst_id, load
        if best_id < 0:
            raise RoutingError(f"no instance can serve stage {stage.value}", stage.value)
        return best_id

    def enqueue(self, instance_id: int, tokens: int, now: float) -> None:
        status = self._status(instance_id)
        status.queued_requests += 1
        status.queued_tokens += tokens
        status.last_update = now

    def dequeue(self, instance_id: int, tokens: int, now: float) -> None:
        status = self._status(instance_id)
        status.queued_requests -= 1
        status.queued_tokens -= tokens
        status.last_update = now

    def complete(self, instance_id: int, now: float, active: bool = False) -> None:
        status = self._status(instance_id)
        status.active = active
        status.last_update = now

    def _status(self, instance_id: int) -> InstanceStatus:
        try:
            return self.statuses[instance_id]
        except KeyError:
            raise LookupError(f"unknown instance id {instance_id}") from None


@dataclass(frozen=True)
class SchedulerConfig:
    """Load metrics per stage; token-dominated stages balance on queued tokens."""
    encode_metric: LoadMetric = LoadMetric.QUEUED_TOKENS
    prefill_metric: LoadMetric = LoadMetric.QUEUED_TOKENS
    decode_metric: LoadMetric = LoadMetric.QUEUED_REQUESTS

    def metric_for(self, stage: Stage) -> LoadMetric:
        if stage == Stage.ENCODE:
            return self.encode_metric
        if stage == Stage.PREFILL:
            return self.prefill_metric
        return self.decode_metric
