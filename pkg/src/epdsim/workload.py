"""Synthetic workload generation and trace file ingestion.

Requests carry modal inputs (images dominate the supported mix) plus text and
output token counts.  Image dimensions are converted to visual token counts
with a patch-grid rule; arrivals follow a homogeneous Poisson process.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum

from .errors import TraceParseError


class ModalKind(str, Enum):
    IMAGE = "image"
    AUDIO = "audio"
    VIDEO = "video"
    TEXT = "text"


@dataclass(frozen=True)
class ModalInput:
    kind: ModalKind
    width: int = 0
    height: int = 0
    content_hash: int = 0
    visual_tokens: int = 0

    def __post_init__(self):
        if self.kind == ModalKind.IMAGE and (self.width <= 0 or self.height <= 0):
            raise ValueError(f"image input needs positive dimensions, got {self.width}x{self.height}")
        if self.kind != ModalKind.TEXT and self.visual_tokens < 1:
            raise ValueError("non-text input needs visual_tokens >= 1")


@dataclass
class Request:
    id: int
    arrival_time: float  # ms since simulation start
    inputs: list[ModalInput] = field(default_factory=list)
    text_tokens: int = 0
    output_tokens: int = 64
    timestamps: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.arrival_time < 0:
            raise ValueError(f"request {self.id}: arrival_time must be >= 0")
        if self.output_tokens < 1:
            raise ValueError(f"request {self.id}: output_tokens must be >= 1")
        if self.text_tokens < 0:
            raise ValueError(f"request {self.id}: text_tokens must be >= 0")

    @property
    def is_multimodal(self) -> bool:
        return any(inp.kind != ModalKind.TEXT for inp in self.inputs)

    @property
    def visual_tokens(self) -> int:
        return sum(inp.visual_tokens for inp in self.inputs if inp.kind != ModalKind.TEXT)

    @property
    def total_tokens(self) -> int:
        """Sequence length seen by the language stack (visual + text)."""
        return self.visual_tokens + self.text_tokens


@dataclass
class WorkloadProfile:
    name: str
    multimodal_fraction: float
    image_dims: list[tuple[tuple[int, int], float]]  # ((width, height), weight)
    mean_text_tokens: float
    output_tokens: int = 64
    per_npu_rate: float = 4.0  # requests/s/NPU
    patch_px: int = 28

    def __post_init__(self):
        if not 0.0 <= self.multimodal_fraction <= 1.0:
            raise ValueError("multimodal_fraction must be in [0, 1]")
        if self.per_npu_rate <= 0:
            raise ValueError("per_npu_rate must be > 0")


def visual_token_count(width: int, height: int, patch: int = 28) -> int:
    """Token count of an image on a patch grid: round(h/patch) * round(w/patch).

    Rounding is half-up per axis, and the result is clamped to at least one
    token.
    """
    if width <= 0 or height <= 0 or patch <= 0:
        raise ValueError(f"dimensions and patch must be positive, got ({width}, {height}, {patch})")
    rows = max(1, math.floor(height / patch + 0.5))
    cols = max(1, math.floor(width / patch + 0.5))
    return rows * cols


def stable_content_hash(*parts) -> int:
    """64-bit content hash that is stable across runs and platforms."""
    digest = hashlib.blake2b(repr(tuple(parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _sample_text_tokens(rng: random.Random, mean: float) -> int:
    """Geometric draw on {1, 2, ...} with the requested mean (>= 1)."""
    if mean <= 1.0:
        return 1
    p = 1.0 / mean
    u = rng.random()
    return int(math.log1p(-u) / math.log1p(-p)) + 1


def generate_trace(profile: WorkloadProfile, npu_count: int, duration: float,
                   seed: int) -> list[Request]:
    """Poisson arrivals at profile.per_npu_rate * npu_count over `duration` seconds.

    A fixed (profile, npu_count, duration, seed) tuple always produces the
    identical trace.
    """
    if duration <= 0:
        raise ValueError("duration must be > 0")
    if npu_count < 1:
        raise ValueError("npu_count must be >= 1")
    rng = random.Random(seed)
    rate = profile.per_npu_rate * npu_count  # requests/s
    horizon_ms = duration * 1000.0
    requests = []
    t_ms = rng.expovariate(rate) * 1000.0
    while t_ms < horizon_ms:
        requests.append(_synthesize_request(rng, profile, len(requests), t_ms))
        t_ms += rng.expovariate(rate) * 1000.0
    return requests


def generate_request_count(profile: WorkloadProfile, npu_count: int, count: int,
                           seed: int) -> list[Request]:
    """Like generate_trace but stops after exactly `count` arrivals."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if npu_count < 1:
        raise ValueError("npu_count must be >= 1")
    rng = random.Random(seed)
    rate = profile.per_npu_rate * npu_count
    requests = []
    t_ms = 0.0
    for i in range(count):
        t_ms += rng.expovariate(rate) * 1000.0
        requests.append(_synthesize_request(rng, profile, i, t_ms))
    return requests


def _synthesize_request(rng: random.Random, profile: WorkloadProfile,
                        req_id: int, arrival_ms: float) -> Request:
    inputs = []
    if rng.random() < profile.multimodal_fraction:
        dims, weights = zip(*[(d, w) for d, w in profile.image_dims])
        (w, h) = rng.choices(dims, weights=weights, k=1)[0]
        inputs.append(ModalInput(
            kind=ModalKind.IMAGE, width=w, height=h,
            content_hash=rng.getrandbits(64),
            visual_tokens=visual_token_count(w, h, profile.patch_px),
        ))
    return Request(
        id=req_id,
        arrival_time=arrival_ms,
        inputs=inputs,
        text_tokens=_sample_text_tokens(rng, profile.mean_text_tokens),
        output_tokens=profile.output_tokens,
    )


@dataclass
class TraceLoadResult:
    requests: list[Request]
    sorted_on_load: bool = False  # set when arrivals had to be re-sorted


def load_trace(path, patch: int = 28) -> TraceLoadResult:
    """Parse a JSON-lines trace file.

    Each line is one object with fields `id`, `arrival_ms`, optional `image`
    ([w, h] or a list of pairs), optional `content_hash`, optional
    `visual_tokens`, `text_tokens` and `output_tokens`.  Unknown fields are
    ignored.  Out-of-order arrivals are sorted and flagged in the result.
    """
    requests = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(f"line {lineno}: invalid JSON ({exc.msg})", lineno) from exc
            try:
                requests.append(_request_from_record(obj, patch))
            except (KeyError, TypeError, ValueError) as exc:
                raise TraceParseError(f"line {lineno}: {exc}", lineno) from exc
    sorted_on_load = any(
        requests[i].arrival_time > requests[i + 1].arrival_time
        for i in range(len(requests) - 1)
    )
    if sorted_on_load:
        requests.sort(key=lambda r: (r.arrival_time, r.id))
    return TraceLoadResult(requests=requests, sorted_on_load=sorted_on_load)


def _request_from_record(obj: dict, patch: int) -> Request:
    req_id = int(obj["id"])
    arrival = float(obj["arrival_ms"])
    image = obj.get("image")
    dims: list[tuple[int, int]] = []
    if image is not None:
        if not isinstance(image, list) or not image:
            raise ValueError("'image' must be [w, h] or a list of [w, h] pairs")
        if isinstance(image[0], list):
            dims = [(int(w), int(h)) for w, h in image]
        else:
            dims = [(int(image[0]), int(image[1]))]
    inputs = []
    explicit_tokens = obj.get("visual_tokens")
    for idx, (w, h) in enumerate(dims):
        if explicit_tokens is not None and len(dims) == 1:
            vtok = int(explicit_tokens)
        else:
            vtok = visual_token_count(w, h, patch)
        chash = obj.get("content_hash")
        if chash is None:
            chash = stable_content_hash(w, h, req_id, idx)
        inputs.append(ModalInput(kind=ModalKind.IMAGE, width=w, height=h,
                                 content_hash=int(chash), visual_tokens=vtok))
    return Request(
        id=req_id,
        arrival_time=arrival,
        inputs=inputs,
        text_tokens=int(obj.get("text_tokens", 0)),
        output_tokens=int(obj.get("output_tokens", 64)),
    )
