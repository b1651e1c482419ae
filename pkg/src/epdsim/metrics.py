"""Per-request and aggregate serving metrics plus report serialization.

Effective throughput is goodput: only tokens of requests meeting both latency
targets count, normalized per device and per second of makespan.  Raw
throughput is reported alongside.  Percentiles use the nearest-rank method.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import MetricError


class RequestStatus(str, Enum):
    COMPLETED = "completed"
    REJECTED = "rejected"


@dataclass(frozen=True)
class RequestRecord:
    id: int
    arrival: float
    first_token: float
    done: float
    output_tokens: int
    status: RequestStatus = RequestStatus.COMPLETED
    reject_reason: str = ""

    def __post_init__(self):
        if self.status == RequestStatus.COMPLETED:
            if not (self.arrival <= self.first_token <= self.done):
                raise ValueError(
                    f"request {self.id}: timestamps must satisfy "
                    f"arrival <= first_token <= done")


@dataclass(frozen=True)
class SloConfig:
    ttft_max: float = 2000.0  # ms
    tpot_max: float = 50.0    # ms

    def __post_init__(self):
        if self.ttft_max <= 0 or self.tpot_max <= 0:
            raise ValueError("SLO thresholds must be > 0")


def ttft(record: RequestRecord) -> float:
    if record.status != RequestStatus.COMPLETED:
        raise MetricError(f"ttft undefined for {record.status.value} request {record.id}")
    return record.first_token - record.arrival


def tpot(record: RequestRecord) -> float:
    if record.status != RequestStatus.COMPLETED:
        raise MetricError(f"tpot undefined for {record.status.value} request {record.id}")
    if record.output_tokens == 1:
        return 0.0
    return (record.done - record.first_token) / (record.output_tokens - 1)


def meets_slo(record: RequestRecord, slo: SloConfig) -> bool:
    if record.status != RequestStatus.COMPLETED:
        return False
    return ttft(record) <= slo.ttft_max and tpot(record) <= slo.tpot_max


def slo_attainment(records: list[RequestRecord], slo: SloConfig) -> float:
    """Fraction of all arrived requests finishing within both latency targets."""
    if not records:
        return 1.0
    passing = sum(1 for r in records if meets_slo(r, slo))
    return passing / len(records)


def effective_throughput(records: list[RequestRecord], slo: SloConfig,
                         npu_count: int, makespan: float) -> float:
    """Goodput: tokens of SLO-passing requests per second per device."""
    if makespan <= 0:
        raise ValueError("makespan must be > 0")
    if npu_count < 1:
        raise ValueError("npu_count must be >= 1")
    tokens = sum(r.output_tokens for r in records if meets_slo(r, slo))
    return tokens / (makespan / 1000.0) / npu_count


def raw_throughput(records: list[RequestRecord], npu_count: int, makespan: float) -> float:
    if makespan <= 0:
        raise ValueError("makespan must be > 0")
    tokens = sum(r.output_tokens for r in records if r.status == RequestStatus.COMPLETED)
    return tokens / (makespan / 1000.0) / npu_count


def percentile(values: list[float], pct: float) -> float:
    """Nearest-rank percentile; pct in (0, 100]."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


def _stats_block(values: list[float]) -> dict:
    if not values:
        return {"mean": 0.0, "p50": 0.0, "p90": 0.0, "p99": 0.0}
    return {
        "mean": sum(values) / len(values),
        "p50": percentile(values, 50),
        "p90": percentile(values, 90),
        "p99": percentile(values, 99),
    }


@dataclass
class TransferStats:
    dedup_hits: int = 0
    encode_executions: int = 0
    feature_store_misses: int = 0
    recomputations: int = 0
    mean_ep_overlap_ratio: float = 1.0
    mean_ep_exposed_ms: float = 0.0
    mean_kv_overlap_ratio: float = 1.0
    mean_kv_exposed_ms: float = 0.0
    mean_kv_link_busy_ms: float = 0.0
    mean_kv_group_size: float = 0.0


@dataclass
class RunReport:
    deployment: str
    npu_count: int
    seed: int
    slo: SloConfig
    records: list[RequestRecord] = field(default_factory=list)
    transfer: TransferStats = field(default_factory=TransferStats)
    rejected: int = 0

    @property
    def empty(self) -> bool:
        return not self.records

    @property
    def makespan(self) -> float:
        completed = [r for r in self.records if r.status == RequestStatus.COMPLETED]
        if not completed:
            return 0.0
        first_arrival = min(r.arrival for r in self.records)
        last_done = max(r.done for r in completed)
        return last_done - first_arrival

    def aggregates(self) -> dict:
        completed = [r for r in self.records if r.status == RequestStatus.COMPLETED]
        ttfts = [ttft(r) for r in completed]
        tpots = [tpot(r) for r in completed]
        makespan = self.makespan
        agg = {
            "requests": len(self.records),
            "completed": len(completed),
            "rejected": self.rejected,
            "ttft_ms": _stats_block(ttfts),
            "tpot_ms": _stats_block(tpots),
            "slo_attainment": slo_attainment(self.records, self.slo),
            "makespan_ms": makespan,
            "per_npu_effective_throughput": (
                effective_throughput(self.records, self.slo, self.npu_count, makespan)
                if makespan > 0 else 0.0),
            "per_npu_raw_throughput": (
                raw_throughput(self.records, self.npu_count, makespan)
                if makespan > 0 else 0.0),
            "empty": self.empty,
        }
        return agg

    def to_dict(self) -> dict:
        return {
            "schema": "epdsim-report-v1",
            "deployment": self.deployment,
            "npu_count": self.npu_count,
            "seed": self.seed,
            "slo": {"ttft_max_ms": self.slo.ttft_max, "tpot_max_ms": self.slo.tpot_max},
            "aggregates": self.aggregates(),
            "transfer": {
                "dedup_hits": self.transfer.dedup_hits,
                "encode_executions": self.transfer.encode_executions,
                "feature_store_misses": self.transfer.feature_store_misses,
                "recomputations": self.transfer.recomputations,
                "mean_ep_overlap_ratio": self.transfer.mean_ep_overlap_ratio,
                "mean_ep_exposed_ms": self.transfer.mean_ep_exposed_ms,
                "mean_kv_overlap_ratio": self.transfer.mean_kv_overlap_ratio,
                "mean_kv_exposed_ms": self.transfer.mean_kv_exposed_ms,
                "mean_kv_link_busy_ms": self.transfer.mean_kv_link_busy_ms,
                "mean_kv_group_size": self.transfer.mean_kv_group_size,
            },
            "records": [
                {
                    "id": r.id,
                    "arrival_ms": r.arrival,
                    "first_token_ms": r.first_token,
                    "done_ms": r.done,
                    "output_tokens": r.output_tokens,
                    "status": r.status.value,
                    "reject_reason": r.reject_reason,
                }
                for r in self.records
            ],
        }

    @staticmethod
    def from_dict(data: dict) -> "RunReport":
        slo = SloConfig(ttft_max=data["slo"]["ttft_max_ms"],
                        tpot_max=data["slo"]["tpot_max_ms"])
        records = [
            RequestRecord(
                id=rec["id"], arrival=rec["arrival_ms"],
                first_token=rec["first_token_ms"], done=rec["done_ms"],
                output_tokens=rec["output_tokens"],
                status=RequestStatus(rec["status"]),
                reject_reason=rec.get("reject_reason", ""),
            )
            for rec in data["records"]
        ]
        transfer = TransferStats(**{
            k: data["transfer"][k] for k in (
                "dedup_hits", "encode_executions", "feature_store_misses",
                "recomputations", "mean_ep_overlap_ratio", "mean_ep_exposed_ms",
                "mean_kv_overlap_ratio", "mean_kv_exposed_ms",
                "mean_kv_link_busy_ms", "mean_kv_group_size")
        })
        report = RunReport(deployment=data["deployment"], npu_count=data["npu_count"],
                           seed=data["seed"], slo=slo, records=records, transfer=transfer,
                           rejected=data["aggregates"]["rejected"])
        return report


def export_report(report: RunReport, fmt: str = "json") -> bytes:
    """Serialize a report with stable field ordering; json round-trips byte-identically."""
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n").encode()
    if fmt == "csv":
        out = io.StringIO()
        out.write("id,arrival_ms,first_token_ms,done_ms,output_tokens,status,ttft_ms,tpot_ms,meets_slo\n")
        for r in report.records:
            if r.status == RequestStatus.COMPLETED:
                out.write(f"{r.id},{r.arrival:.6f},{r.first_token:.6f},{r.done:.6f},"
                          f"{r.output_tokens},{r.status.value},{ttft(r):.6f},{tpot(r):.6f},"
                          f"{int(meets_slo(r, report.slo))}\n")
            else:
                out.write(f"{r.id},{r.arrival:.6f},,,{r.output_tokens},{r.status.value},,,0\n")
        agg = report.aggregates()
        out.write("# aggregate,value\n")
        for key in ("requests", "completed", "rejected", "slo_attainment",
                    "makespan_ms", "per_npu_effective_throughput",
                    "per_npu_raw_throughput"):
            out.write(f"# {key},{agg[key]}\n")
        for metric in ("ttft_ms", "tpot_ms"):
            for stat, value in agg[metric].items():
                out.write(f"# {metric}_{stat},{value}\n")
        return out.getvalue().encode()
    raise ValueError(f"unknown export format {fmt!r}")
