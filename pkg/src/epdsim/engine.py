"""Deterministic discrete-event core.

Each instance owns one execution slot.  Coupled instances (several stages in
one instance) pick work with encode > prefill > decode priority, which models
prefill-first engines: decode steps wait behind newly arrived prompt work.
Co-located instances (separate instances sharing a device) run concurrently;
their active units are stretched by the interference matrix over exactly the
wall-clock intervals where peers execute.

Transfers: encoder features move asynchronously (prefetch) or inside the
prefill batch (no prefetch); the prefill->decode cache moves as grouped
layer-wise transmissions over a FIFO link, and a request joins the decode
batch only once its exposed transfer tail has elapsed.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from . import costmodel, defaults
from .costmodel import (DECODE_RESOURCES, ENCODE_RESOURCES, PREFILL_RESOURCES,
                        InterferenceMatrix, LinkProfile, ModelProfile,
                        ResourceProfile, TableLink, interference_factor,
                        tp_adjust, transfer_latency)
from .errors import ConfigError
from .metrics import RequestRecord, RequestStatus, RunReport, SloConfig, TransferStats
from .scheduler import LoadMetric, SchedulerConfig, StatusTable, route
from .topology import Deployment, Instance, Stage
from .transfer import FeatureStore, plan_prefetch
from .kernels import best_group, kv_exposed_busy
from .workload import Request, stable_content_hash


class EventKind(str, Enum):
    ARRIVAL = "arrival"
    ENCODE_START = "encode_start"
    ENCODE_DONE = "encode_done"
    FEATURE_READY = "feature_ready"
    PREFILL_START = "prefill_start"
    PREFILL_DONE = "prefill_done"
    KV_GROUP_DONE = "kv_group_done"
    DECODE_STEP_DONE = "decode_step_done"
    REQUEST_DONE = "request_done"
    FAULT = "fault"


@dataclass(frozen=True)
class BatchPolicy:
    max_batch_requests: int = 256
    max_batch_tokens: int = 8192
    encode_batch_requests: int = 1
    decode_mode: str = "continuous"

    def __post_init__(self):
        if self.max_batch_requests < 1 or self.max_batch_tokens < 1:
            raise ValueError("batch caps must be >= 1")
        if self.encode_batch_requests < 1:
            raise ValueError("encode_batch_requests must be >= 1")
        if self.decode_mode != "continuous":
            raise ValueError("only continuous decode batching is supported")


def form_batch(queue, policy: BatchPolicy, now: float) -> list:
    """Greedy FIFO fill over (item, tokens) pairs respecting both caps.

    The head of a non-empty queue is always admitted, even when it alone
    exceeds the token cap.
    """
    batch = []
    tokens = 0
    for item, item_tokens in queue:
        if len(batch) >= policy.max_batch_requests:
            break
        if batch and tokens + item_tokens > policy.max_batch_tokens:
            break
        batch.append(item)
        tokens += item_tokens
    return batch


@dataclass(frozen=True)
class LinkSet:
    ep_inter: LinkProfile | TableLink = defaults.EP_INTER_LINK
    pd_inter: LinkProfile = defaults.PD_INTER_LINK
    intra: LinkProfile = defaults.INTRA_DEVICE_LINK


STAGE_RESOURCES = {
    Stage.ENCODE: ENCODE_RESOURCES,
    Stage.PREFILL: PREFILL_RESOURCES,
    Stage.DECODE: DECODE_RESOURCES,
}


@dataclass
class _Unit:
    """One occupancy of an instance's execution slot."""
    stage: Stage
    members: list[int]
    remaining: float          # nominal ms left (factor 1)
    factor: float
    last_update: float
    started: float
    meta: dict = field(default_factory=dict)


class _Inst:
    """Runtime state of one instance."""

    def __init__(self, topo: Instance):
        self.topo = topo
        self.encode_q: deque[int] = deque()
        self.prefill_q: deque[int] = deque()
        self.decode_wait: list[int] = []
        self.decode_batch: list[int] = []
        self.active: _Unit | None = None
        self.epoch = 0
        self.idle_since = 0.0
        self.kv_used = 0.0


class _Req:
    """Per-request runtime bookkeeping."""

    def __init__(self, request: Request):
        self.request = request
        self.path = route(request).path
        self.assigned: dict[Stage, int] = {}
        self.content_key = 0
        self.encode_done_t = math.nan
        self.feature_ready_t = math.nan
        self.ep_transfer_ms = 0.0
        self.pending_fetch_ms = 0.0
        self.ep_logged = False
        self.tokens_done = 0
        self.first_token = math.nan
        self.done = math.nan
        self.status = RequestStatus.COMPLETED
        self.reject_reason = ""
        self.finished = False
        self.kv_reserved = 0.0
        self.ep_plan = None
        self.kv_exposed = math.nan
        self.kv_busy = math.nan
        self.kv_group = 0
        self.kv_ratio = math.nan


class Simulation:
    def __init__(self, deployment: Deployment, trace: list[Request],
                 model_profile: ModelProfile, link_profiles: LinkSet | None = None,
                 scheduler_config: SchedulerConfig | None = None,
                 batch_policy: BatchPolicy | None = None, seed: int = 0,
                 slo: SloConfig | None = None,
                 interference: InterferenceMatrix | None = None,
                 ep_prefetch: bool = True, pd_grouping: bool = True,
                 store_failure_prob: float = 0.0,
                 kv_capacity_bytes: float | None = None,
                 kv_reject: bool = True,
                 event_log_path=None):
        if any(trace[i].arrival_time > trace[i + 1].arrival_time
               for i in range(len(trace) - 1)):
            raise ConfigError("trace must be sorted by arrival time")
        self.deployment = deployment
        self.trace = trace
        self.profile = model_profile
        self.links = link_profiles or LinkSet()
        self.sched_cfg = scheduler_config or SchedulerConfig()
        self.policy = batch_policy or BatchPolicy()
        self.slo = slo or SloConfig()
        self.matrix = interference if interference is not None else defaults.DEFAULT_INTERFERENCE
        self.ep_prefetch = ep_prefetch
        self.pd_grouping = pd_grouping
        self.store_failure_prob = store_failure_prob
        self.kv_capacity = kv_capacity_bytes
        self.kv_reject = kv_reject
        self.seed = seed
        self.rng = random.Random(seed)
        self.event_log_path = event_log_path
        self._log_fh = None

        if any(r.is_multimodal for r in trace) and not deployment.instances_with_stage(Stage.ENCODE):
            raise ConfigError("trace contains multimodal requests but deployment has no encode stage")

        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.insts = {i.id: _Inst(i) for i in deployment.instances}
        self.device_insts: dict[int, list[int]] = {}
        for inst in deployment.instances:
            for dev in inst.device_ids:
                self.device_insts.setdefault(dev, []).append(inst.id)
        self.table = StatusTable(deployment)
        self.store = FeatureStore()
        self.reqs: dict[int, _Req] = {}
        self.encode_executions = 0
        self.recomputations = 0
        self.tokens_emitted = 0
        # requests waiting on a producer's in-flight encode, keyed by content hash
        self._dup_waiters: dict[int, list[int]] = {}
        # FIFO occupancy horizon per (src_device, dst_device) pair
        self._link_busy: dict[tuple[int, int], float] = {}

    # ------------------------------------------------------------------ events

    def _push(self, t: float, kind: str, payload: tuple) -> None:
        heapq.heappush(self._heap, (t, self._seq, kind, payload))
        self._seq += 1

    def _log(self, kind: EventKind, request: int | None = None,
             instance: int | None = None, t: float | None = None, **extra) -> None:
        if self._log_fh is None:
            return
        record = {"t": round(self.now if t is None else t, 6), "kind": kind.value,
                  "request": request, "instance": instance}
        record.update(extra)
        self._log_fh.write(json.dumps(record) + "\n")

    # ------------------------------------------------------------------- links

    def _link_between(self, src_inst: _Inst, dst_inst: _Inst, kind: str):
        src_devs = set(src_inst.topo.device_ids)
        dst_devs = set(dst_inst.topo.device_ids)
        if src_devs & dst_devs:
            return self.links.intra, (min(src_devs), min(src_devs))
        link = self.links.ep_inter if kind == "ep" else self.links.pd_inter
        return link, (min(src_devs), min(dst_devs))

    def _link_horizon(self, key: tuple[int, int]) -> float:
        return self._link_busy.get(key, 0.0)

    def _occupy_link(self, key: tuple[int, int], until: float) -> None:
        if until > self._link_busy.get(key, 0.0):
            self._link_busy[key] = until

    # -------------------------------------------------------------------- run

    def run(self) -> RunReport:
        try:
            if self.event_log_path is not None:
                self._log_fh = open(self.event_log_path, "w", encoding="utf-8")
            return self._run()
        finally:
            if self._log_fh is not None:
                self._log_fh.close()
                self._log_fh = None

    def _run(self) -> RunReport:
        for request in self.trace:
            self._push(request.arrival_time, "arrival", (request.id,))
        while self._heap:
            t, _, kind, payload = heapq.heappop(self._heap)
            if t < self.now - 1e-9:
                raise AssertionError("event time moved backwards")
            self.now = max(self.now, t)
            if kind == "arrival":
                self._on_arrival(*payload)
            elif kind == "feature_ready":
                self._on_feature_ready(*payload)
            elif kind == "kv_ready":
                self._on_kv_ready(*payload)
            elif kind == "unit_end":
                self._on_unit_end(*payload)
        return self._build_report()

    # --------------------------------------------------------------- handlers

    def _on_arrival(self, req_id: int) -> None:
        runtime = _Req(self.reqs[req_id].request) if req_id in self.reqs else _Req(
            next(r for r in self.trace if r.id == req_id))
        self.reqs[req_id] = runtime
        runtime.request.timestamps["arrival"] = self.now
        self._log(EventKind.ARRIVAL, request=req_id)
        if runtime.path[0] == Stage.ENCODE:
            self._assign_encode(runtime)
        else:
            runtime.encode_done_t = self.now
            runtime.feature_ready_t = self.now
            self._assign_prefill(runtime, ready=True)

    def _assign_encode(self, runtime: _Req) -> None:
        req = runtime.request
        hashes = [inp.content_hash for inp in req.inputs if inp.kind.value != "text"]
        runtime.content_key = hashes[0] if len(hashes) == 1 else stable_content_hash(*hashes)
        inst_id = self.table.select_instance(
            Stage.ENCODE, self.sched_cfg.metric_for(Stage.ENCODE))
        runtime.assigned[Stage.ENCODE] = inst_id
        self.table.enqueue(inst_id, req.visual_tokens, self.now)

        entry = self.store.entries.get(runtime.content_key)
        result = self.store.put(runtime.content_key,
                                costmodel.feature_bytes(self.profile, req.visual_tokens),
                                inst_id, math.inf)
        if result.value == "deduplicated":
            # duplicate content: reuse the produced (or in-flight) feature
            self.table.dequeue(inst_id, req.visual_tokens, self.now)
            if entry is not None and entry.ready_time <= self.now:
                self._finish_encode(runtime, entry_ready=entry.ready_time)
            elif entry is not None and not math.isinf(entry.ready_time):
                self._push(entry.ready_time, "feature_ready", (runtime.request.id, "encode_dedup"))
            else:
                self._dup_waiters.setdefault(runtime.content_key, []).append(req.id)
            return
        inst = self.insts[inst_id]
        inst.encode_q.append(req.id)
        self._dispatch(inst)

    def _finish_encode(self, runtime: _Req, entry_ready: float) -> None:
        """Record encode completion (own compute or deduplicated reuse)."""
        runtime.encode_done_t = max(self.now, entry_ready)
        runtime.request.timestamps["encode_done"] = runtime.encode_done_t
        self._log(EventKind.ENCODE_DONE, request=runtime.request.id,
                  instance=runtime.assigned.get(Stage.ENCODE), t=runtime.encode_done_t)
        self._assign_prefill(runtime, ready=False)

    def _assign_prefill(self, runtime: _Req, ready: bool) -> None:
        req = runtime.request
        inst_id = self.table.select_instance(
            Stage.PREFILL, self.sched_cfg.metric_for(Stage.PREFILL))
        runtime.assigned[Stage.PREFILL] = inst_id
        self.table.enqueue(inst_id, req.total_tokens, self.now)
        inst = self.insts[inst_id]

        if ready or not req.is_multimodal:
            # text-only (or caller-declared ready): no feature to move
            runtime.feature_ready_t = self.now
            inst.prefill_q.append(req.id)
            self._dispatch(inst)
            return

        enc_inst = self.insts[runtime.assigned[Stage.ENCODE]]
        if enc_inst.topo.id == inst.topo.id:
            # coupled encode+prefill: zero transfer
            runtime.feature_ready_t = runtime.encode_done_t
            runtime.ep_transfer_ms = 0.0
            inst.prefill_q.append(req.id)
            self._dispatch(inst)
            return

        link, key = self._link_between(enc_inst, inst, "ep")
        nbytes = costmodel.feature_bytes(self.profile, req.visual_tokens)
        duration = transfer_latency(link, nbytes)
        duration = self._maybe_recompute(runtime, duration)
        runtime.ep_transfer_ms = duration
        if self.ep_prefetch:
            start = max(runtime.encode_done_t, self._link_horizon(key))
            ready_t = start + duration
            self._occupy_link(key, ready_t)
            self._push(ready_t, "feature_ready", (req.id, "transfer"))
        else:
            # fetched synchronously inside the prefill batch
            runtime.pending_fetch_ms = duration
            inst.prefill_q.append(req.id)
            self._dispatch(inst)

    def _maybe_recompute(self, runtime: _Req, duration: float) -> float:
        """Fault-injected store miss: regenerate the feature at the consumer."""
        entry = self.store.get(runtime.content_key, self.store_failure_prob, self.rng)
        if entry is None:
            self.recomputations += 1
            self._log(EventKind.FAULT, request=runtime.request.id)
            duration += costmodel.encode_latency(self.profile, runtime.request.visual_tokens)
        return duration

    def _on_feature_ready(self, req_id: int, origin: str) -> None:
        runtime = self.reqs[req_id]
        if origin == "encode_dedup":
            self._finish_encode(runtime, entry_ready=self.now)
            return
        runtime.feature_ready_t = self.now
        runtime.request.timestamps["feature_ready"] = self.now
        self._log(EventKind.FEATURE_READY, request=req_id,
                  instance=runtime.assigned.get(Stage.PREFILL))
        inst = self.insts[runtime.assigned[Stage.PREFILL]]
        inst.prefill_q.append(req_id)
        self._dispatch(inst)

    def _on_kv_ready(self, req_id: int) -> None:
        runtime = self.reqs[req_id]
        inst = self.insts[runtime.assigned[Stage.DECODE]]
        if self.kv_capacity is not None:
            need = costmodel.kv_bytes(
                self.profile, runtime.request.total_tokens + runtime.request.output_tokens)
            if inst.kv_used + need > self.kv_capacity:
                if self.kv_reject:
                    self._reject(runtime, "kv_memory_exhausted")
                    return
                # queue until memory frees up; retried on every decode boundary
                inst.decode_wait.append(req_id)
                return
            inst.kv_used += need
            runtime.kv_reserved = need
        inst.decode_wait.append(req_id)
        self._dispatch(inst)

    def _reject(self, runtime: _Req, reason: str) -> None:
        runtime.status = RequestStatus.REJECTED
        runtime.reject_reason = reason
        runtime.finished = True
        self.table.dequeue(runtime.assigned[Stage.DECODE], 0, self.now)

    # ------------------------------------------------------------ dispatching

    def _dispatch(self, inst: _Inst) -> None:
        if inst.active is not None:
            return
        stages = inst.topo.stages
        if Stage.ENCODE in stages and inst.encode_q:
            self._start_encode(inst)
        elif Stage.PREFILL in stages and inst.prefill_q:
            self._start_prefill(inst)
        elif Stage.DECODE in stages and (inst.decode_wait or inst.decode_batch):
            self._start_decode_step(inst)

    def _start_unit(self, inst: _Inst, unit: _Unit) -> None:
        inst.active = unit
        inst.epoch += 1
        unit.factor = self._factor_for(inst, unit.stage)
        end = self.now + unit.remaining * unit.factor
        self._push(end, "unit_end", (inst.topo.id, inst.epoch))
        self._restretch_peers(inst)

    def _start_encode(self, inst: _Inst) -> None:
        queue = [(rid, self.reqs[rid].request.visual_tokens) for rid in inst.encode_q]
        encode_policy = BatchPolicy(
            max_batch_requests=self.policy.encode_batch_requests,
            max_batch_tokens=self.policy.max_batch_tokens,
            encode_batch_requests=self.policy.encode_batch_requests)
        members = form_batch(queue, encode_policy, self.now)
        for rid in members:
            inst.encode_q.popleft()
            self.table.dequeue(inst.topo.id, self.reqs[rid].request.visual_tokens, self.now)
            self.reqs[rid].request.timestamps["encode_start"] = self.now
            self._log(EventKind.ENCODE_START, request=rid, instance=inst.topo.id)
        total_tokens = sum(self.reqs[rid].request.visual_tokens for rid in members)
        base = costmodel.encode_latency(self.profile, total_tokens)
        nominal = tp_adjust(base, inst.topo.tp_degree, self.profile.llm_layers,
                            self.profile.tp_sync_per_layer)
        self.encode_executions += len(members)
        batch_end_nominal = self.now + nominal  # provisional; dedup waiters resync at true end
        for rid in members:
            self.store.mark_ready(self.reqs[rid].content_key, batch_end_nominal)
        self._start_unit(inst, _Unit(Stage.ENCODE, members, nominal, 1.0, self.now, self.now))

    def _start_prefill(self, inst: _Inst) -> None:
        queue = [(rid, self.reqs[rid].request.total_tokens) for rid in inst.prefill_q]
        members = form_batch(queue, self.policy, self.now)
        fetch_ms = 0.0
        for rid in members:
            inst.prefill_q.popleft()
            runtime = self.reqs[rid]
            self.table.dequeue(inst.topo.id, runtime.request.total_tokens, self.now)
            runtime.request.timestamps["prefill_start"] = self.now
            self._log(EventKind.PREFILL_START, request=rid, instance=inst.topo.id)
            fetch_ms += runtime.pending_fetch_ms
            self._account_ep_overlap(runtime, inst)
        total_tokens = sum(self.reqs[rid].request.total_tokens for rid in members)
        base = costmodel.prefill_latency(self.profile, total_tokens)
        nominal = tp_adjust(base, inst.topo.tp_degree, self.profile.llm_layers,
                            self.profile.tp_sync_per_layer) + fetch_ms
        self._start_unit(inst, _Unit(Stage.PREFILL, members, nominal, 1.0, self.now,
                                     self.now, meta={"tokens": total_tokens}))

    def _account_ep_overlap(self, runtime: _Req, inst: _Inst) -> None:
        """Record the prefetch overlap actually achieved for this request."""
        if runtime.ep_logged or not runtime.request.is_multimodal:
            return
        runtime.ep_logged = True
        coupled = runtime.assigned.get(Stage.ENCODE) == inst.topo.id
        if coupled or runtime.ep_transfer_ms == 0.0:
            runtime.ep_plan = plan_prefetch(0.0, 0.0)
            return
        if not self.ep_prefetch:
            runtime.feature_ready_t = self.now + runtime.pending_fetch_ms
            runtime.request.timestamps["feature_ready"] = runtime.feature_ready_t
            self._log(EventKind.FEATURE_READY, request=runtime.request.id,
                      instance=inst.topo.id, t=runtime.feature_ready_t)
            runtime.ep_plan = plan_prefetch(runtime.ep_transfer_ms, 0.0)
            return
        gate = max(runtime.encode_done_t, inst.idle_since)
        exposed = max(0.0, runtime.feature_ready_t - gate)
        window = max(0.0, (self.now - runtime.encode_done_t) - exposed)
        runtime.ep_plan = plan_prefetch(runtime.ep_transfer_ms, window)

    def _start_decode_step(self, inst: _Inst) -> None:
        if inst.decode_wait:
            inst.decode_batch.extend(inst.decode_wait)
            inst.decode_wait.clear()
        if not inst.decode_batch:
            return
        members = list(inst.decode_batch)
        batch = len(members)
        mean_kv = sum(self.reqs[rid].request.total_tokens + self.reqs[rid].tokens_done
                      for rid in members) / batch
        base = costmodel.decode_step_latency(self.profile, batch, mean_kv)
        nominal = tp_adjust(base, inst.topo.tp_degree, self.profile.llm_layers,
                            self.profile.tp_sync_per_layer)
        self._start_unit(inst, _Unit(Stage.DECODE, members, nominal, 1.0, self.now, self.now))

    # ----------------------------------------------------------- interference

    def _factor_for(self, inst: _Inst, stage: Stage) -> float:
        peers: list[ResourceProfile] = []
        seen: set[int] = set()
        for dev in inst.topo.device_ids:
            for other_id in self.device_insts[dev]:
                if other_id == inst.topo.id or other_id in seen:
                    continue
                seen.add(other_id)
                other = self.insts[other_id]
                if other.active is not None:
                    peers.append(STAGE_RESOURCES[other.active.stage])
        return interference_factor(self.matrix, STAGE_RESOURCES[stage], peers)

    def _restretch_peers(self, inst: _Inst) -> None:
        """Re-time active units on devices shared with `inst` after a set change."""
        seen: set[int] = set()
        for dev in inst.topo.device_ids:
            for other_id in self.device_insts[dev]:
                if other_id == inst.topo.id or other_id in seen:
                    continue
                seen.add(other_id)
                other = self.insts[other_id]
                unit = other.active
                if unit is None:
                    continue
                new_factor = self._factor_for(other, unit.stage)
                if new_factor == unit.factor:
                    continue
                elapsed = self.now - unit.last_update
                unit.remaining = max(0.0, unit.remaining - elapsed / unit.factor)
                unit.last_update = self.now
                unit.factor = new_factor
                other.epoch += 1
                self._push(self.now + unit.remaining * new_factor,
                           "unit_end", (other.topo.id, other.epoch))

    # ------------------------------------------------------------ completions

    def _on_unit_end(self, inst_id: int, epoch: int) -> None:
        inst = self.insts[inst_id]
        if inst.epoch != epoch or inst.active is None:
            return  # stale event from before a re-stretch
        unit = inst.active
        inst.active = None
        inst.idle_since = self.now
        if unit.stage == Stage.ENCODE:
            self._finish_encode_unit(inst, unit)
        elif unit.stage == Stage.PREFILL:
            self._finish_prefill_unit(inst, unit)
        else:
            self._finish_decode_step(inst, unit)
        self._restretch_peers(inst)
        self._dispatch(inst)

    def _finish_encode_unit(self, inst: _Inst, unit: _Unit) -> None:
        for rid in unit.members:
            runtime = self.reqs[rid]
            self.store.mark_ready(runtime.content_key, self.now)
            self._finish_encode(runtime, entry_ready=self.now)
            for dup_id in self._dup_waiters.pop(runtime.content_key, []):
                self._finish_encode(self.reqs[dup_id], entry_ready=self.now)

    def _finish_prefill_unit(self, inst: _Inst, unit: _Unit) -> None:
        duration = self.now - unit.started
        for rid in unit.members:
            runtime = self.reqs[rid]
            runtime.request.timestamps["prefill_done"] = self.now
            self._log(EventKind.PREFILL_DONE, request=rid, instance=inst.topo.id)
            self._route_kv(runtime, inst, duration)

    def _route_kv(self, runtime: _Req, p_inst: _Inst, prefill_wall_ms: float) -> None:
        req = runtime.request
        inst_id = self.table.select_instance(
            Stage.DECODE, self.sched_cfg.metric_for(Stage.DECODE))
        runtime.assigned[Stage.DECODE] = inst_id
        self.table.enqueue(inst_id, req.total_tokens, self.now)
        d_inst = self.insts[inst_id]

        if d_inst.topo.id == p_inst.topo.id:
            # coupled prefill+decode: cache already local
            runtime.kv_exposed = 0.0
            runtime.kv_busy = 0.0
            runtime.kv_group = 0
            runtime.kv_ratio = 1.0
            self._push(self.now, "kv_ready", (req.id,))
            return

        link, key = self._link_between(p_inst, d_inst, "pd")
        layers = self.profile.llm_layers
        per_layer_compute = prefill_wall_ms / layers
        total_bytes = costmodel.kv_bytes(self.profile, req.total_tokens)
        per_layer_payload = total_bytes / layers / link.bandwidth
        if self.pd_grouping:
            group, _ = best_group(layers, per_layer_compute, per_layer_payload,
                                  link.handshake)
        else:
            group = 1
        exposed, busy, last_end = kv_exposed_busy(
            layers, group, per_layer_compute, per_layer_payload, link.handshake)
        ready = max(self.now + exposed, self._link_horizon(key) + busy)
        self._occupy_link(key, ready)

        runtime.kv_exposed = ready - self.now
        runtime.kv_busy = busy
        runtime.kv_group = group
        runtime.kv_ratio = 1.0 - exposed / busy if busy > 0 else 1.0
        if self._log_fh is not None:
            offset = ready - last_end
            for idx in range(math.ceil(layers / group)):
                size = min(group, layers - idx * group)
                # reconstruct group ends so the last group lands on `ready`
                self._log(EventKind.KV_GROUP_DONE, request=req.id, instance=inst_id,
                          t=offset + self._group_end(idx, layers, group,
                                                     per_layer_compute,
                                                     per_layer_payload, link.handshake),
                          group=idx, layers=size)
        self._push(ready, "kv_ready", (req.id,))

    @staticmethod
    def _group_end(index: int, layers: int, group: int, c: float, p: float,
                   h: float) -> float:
        prev_end = 0.0
        first = 0
        k = 0
        while first < layers:
            size = min(group, layers - first)
            ready = (first + size) * c
            prev_end = max(ready, prev_end) + h + size * p
            if k == index:
                return prev_end
            first += size
            k += 1
        return prev_end

    def _finish_decode_step(self, inst: _Inst, unit: _Unit) -> None:
        finished: list[int] = []
        for rid in unit.members:
            runtime = self.reqs[rid]
            runtime.tokens_done += 1
            self.tokens_emitted += 1
            self._log(EventKind.DECODE_STEP_DONE, request=rid, instance=inst.topo.id,
                      token=runtime.tokens_done)
            if runtime.tokens_done == 1:
                runtime.first_token = self.now
                runtime.request.timestamps["first_token"] = self.now
            if runtime.tokens_done >= runtime.request.output_tokens:
                finished.append(rid)
        for rid in finished:
            runtime = self.reqs[rid]
            runtime.done = self.now
            runtime.finished = True
            runtime.request.timestamps["done"] = self.now
            inst.decode_batch.remove(rid)
            inst.kv_used -= runtime.kv_reserved
            self.table.dequeue(inst.topo.id, runtime.request.total_tokens, self.now)
            self.table.complete(inst.topo.id, self.now)
            self._log(EventKind.REQUEST_DONE, request=rid, instance=inst.topo.id)

    # --------------------------------------------------------------- reporting

    def _build_report(self) -> RunReport:
        records = []
        rejected = 0
        ep_plans = []
        kv_stats = []
        for request in self.trace:
            runtime = self.reqs.get(request.id)
            if runtime is None:
                continue
            if runtime.status == RequestStatus.REJECTED:
                rejected += 1
                records.append(RequestRecord(
                    id=request.id, arrival=request.arrival_time,
                    first_token=request.arrival_time, done=request.arrival_time,
                    output_tokens=request.output_tokens,
                    status=RequestStatus.REJECTED,
                    reject_reason=runtime.reject_reason))
                continue
            if not runtime.finished:
                raise AssertionError(f"request {request.id} never terminated")
            records.append(RequestRecord(
                id=request.id, arrival=request.arrival_time,
                first_token=runtime.first_token, done=runtime.done,
                output_tokens=request.output_tokens,
                status=RequestStatus.COMPLETED))
            if runtime.ep_plan is not None and runtime.ep_plan.transfer_latency > 0:
                ep_plans.append(runtime.ep_plan)
            if not math.isnan(runtime.kv_busy) and runtime.kv_group > 0:
                kv_stats.append((runtime.kv_ratio, runtime.kv_exposed,
                                 runtime.kv_busy, runtime.kv_group))

        transfer = TransferStats(
            dedup_hits=self.store.dedup_hits,
            encode_executions=self.encode_executions,
            feature_store_misses=self.store.misses,
            recomputations=self.recomputations,
        )
        if ep_plans:
            transfer.mean_ep_overlap_ratio = sum(p.overlap_ratio for p in ep_plans) / len(ep_plans)
            transfer.mean_ep_exposed_ms = sum(p.exposed for p in ep_plans) / len(ep_plans)
        if kv_stats:
            transfer.mean_kv_overlap_ratio = sum(s[0] for s in kv_stats) / len(kv_stats)
            transfer.mean_kv_exposed_ms = sum(s[1] for s in kv_stats) / len(kv_stats)
            transfer.mean_kv_link_busy_ms = sum(s[2] for s in kv_stats) / len(kv_stats)
            transfer.mean_kv_group_size = sum(s[3] for s in kv_stats) / len(kv_stats)

        return RunReport(
            deployment=self.deployment.notation,
            npu_count=self.deployment.devices,
            seed=self.seed,
            slo=self.slo,
            records=records,
            transfer=transfer,
            rejected=rejected,
        )


def simulate(deployment: Deployment, trace: list[Request], model_profile: ModelProfile,
             link_profiles: LinkSet | None = None,
             scheduler_config: SchedulerConfig | None = None,
             batch_policy: BatchPolicy | None = None, seed: int = 0,
             **kwargs) -> RunReport:
    """Run one deterministic simulation and return its report."""
    sim = Simulation(deployment, trace, model_profile, link_profiles,
                     scheduler_config, batch_policy, seed, **kwargs)
    return sim.run()
