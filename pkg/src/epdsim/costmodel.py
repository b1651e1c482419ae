"""Analytic latency/size models, link models, calibration, and interference.

Stage latencies are low-order polynomials whose coefficients are either the
shipped defaults or fitted from measured points with non-negative least
squares.  Co-location slowdowns come from a symmetric class-pair matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import nnls

from .errors import CalibrationError


@dataclass(frozen=True)
class ModelProfile:
    name: str
    feature_dim: int = 3584
    bytes_per_element: int = 2
    llm_layers: int = 28
    kv_bytes_per_token_per_layer: int = 14336
    encode_coeffs: tuple[float, float, float] = (0.0, 0.0, 0.0)   # ms, ms/token, ms/token^2
    prefill_coeffs: tuple[float, float, float] = (0.0, 0.0, 0.0)  # over total batched tokens
    decode_coeffs: tuple[float, float, float] = (0.0, 0.0, 0.0)   # ms, ms/req, ms/(req*token)
    tp_sync_per_layer: float = 0.0  # ms

    def __post_init__(self):
        if self.feature_dim < 1 or self.llm_layers < 1:
            raise ValueError("feature_dim and llm_layers must be >= 1")
        for coeffs in (self.encode_coeffs, self.prefill_coeffs, self.decode_coeffs):
            if any(c < 0 for c in coeffs):
                raise ValueError("latency coefficients must be non-negative")


@dataclass(frozen=True)
class LinkProfile:
    bandwidth: float  # bytes/ms
    handshake: float = 0.0  # ms per transfer

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.handshake < 0:
            raise ValueError("handshake must be >= 0")


@dataclass(frozen=True)
class TableLink:
    """Piecewise-linear latency through measured (bytes, ms) points.

    Used for feature transfers so the shipped defaults hit the measured
    latencies exactly at the measured payload sizes; extrapolates with the
    first/last segment slope outside the table.
    """
    points: tuple[tuple[float, float], ...]
    handshake: float = 0.0  # kept for interface parity; the table subsumes it

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("table link needs at least two points")
        xs = [p[0] for p in self.points]
        if xs != sorted(xs) or len(set(xs)) != len(xs):
            raise ValueError("table link points must be strictly increasing in bytes")

    def latency(self, nbytes: float) -> float:
        pts = self.points
        if nbytes <= pts[0][0]:
            (x0, y0), (x1, y1) = pts[0], pts[1]
        elif nbytes >= pts[-1][0]:
            (x0, y0), (x1, y1) = pts[-2], pts[-1]
        else:
            for i in range(len(pts) - 1):
                if pts[i][0] <= nbytes <= pts[i + 1][0]:
                    (x0, y0), (x1, y1) = pts[i], pts[i + 1]
                    break
        slope = (y1 - y0) / (x1 - x0)
        return max(0.0, y0 + (nbytes - x0) * slope)


def encode_latency(profile: ModelProfile, visual_tokens_in_batch: int) -> float:
    """Modality-encoder time for a batch of n visual tokens; zero tokens cost nothing."""
    if visual_tokens_in_batch < 0:
        raise ValueError("token count must be >= 0")
    if visual_tokens_in_batch == 0:
        return 0.0
    e0, e1, e2 = profile.encode_coeffs
    n = float(visual_tokens_in_batch)
    return e0 + e1 * n + e2 * n * n


def prefill_latency(profile: ModelProfile, total_tokens: int) -> float:
    if total_tokens < 0:
        raise ValueError("token count must be >= 0")
    p0, p1, p2 = profile.prefill_coeffs
    t = float(total_tokens)
    return p0 + p1 * t + p2 * t * t


def decode_step_latency(profile: ModelProfile, batch_size: int, mean_kv_len: float) -> float:
    if batch_size < 0 or mean_kv_len < 0:
        raise ValueError("counts must be >= 0")
    d0, d1, d2 = profile.decode_coeffs
    b = float(batch_size)
    return d0 + d1 * b + d2 * b * mean_kv_len


def feature_bytes(profile: ModelProfile, visual_tokens: int) -> int:
    if visual_tokens < 0:
        raise ValueError("token count must be >= 0")
    return visual_tokens * profile.feature_dim * profile.bytes_per_element


def kv_bytes(profile: ModelProfile, tokens: int) -> int:
    if tokens < 0:
        raise ValueError("token count must be >= 0")
    return tokens * profile.llm_layers * profile.kv_bytes_per_token_per_layer


def transfer_latency(link, nbytes: float) -> float:
    """Transfer time over a link; affine for LinkProfile, table lookup for TableLink."""
    if nbytes < 0:
        raise ValueError("byte count must be >= 0")
    if isinstance(link, TableLink):
        return link.latency(nbytes)
    return link.handshake + nbytes / link.bandwidth


class ModelForm(str, Enum):
    AFFINE = "affine"        # c0 + c1*x
    QUADRATIC = "quadratic"  # c0 + c1*x + c2*x^2


def calibrate(points: list[tuple[float, float]], model_form: ModelForm | str):
    """Non-negative least-squares fit; returns (coefficients, residuals).

    residuals[i] is the absolute error of the fit at points[i].
    """
    form = ModelForm(model_form)
    degree = 1 if form == ModelForm.AFFINE else 2
    n_coeffs = degree + 1
    if len(points) < n_coeffs:
        raise CalibrationError(
            f"{form.value} fit needs at least {n_coeffs} points, got {len(points)}")
    xs = np.array([p[0] for p in points], dtype=float)
    ys = np.array([p[1] for p in points], dtype=float)
    if len(set(xs.tolist())) != len(xs):
        raise CalibrationError("calibration points must have distinct x values")
    design = np.vander(xs, n_coeffs, increasing=True)
    coeffs, _ = nnls(design, ys)
    residuals = np.abs(design @ coeffs - ys)
    return tuple(float(c) for c in coeffs), tuple(float(r) for r in residuals)


class ResourceClass(str, Enum):
    COMPUTE = "compute"
    MEMORY = "memory"


@dataclass(frozen=True)
class ResourceProfile:
    """Demand fractions on the device's resource axes."""
    ai_core: float = 0.0
    ai_vector: float = 0.0
    memory_bw: float = 0.0

    def __post_init__(self):
        for v in (self.ai_core, self.ai_vector, self.memory_bw):
            if not 0.0 <= v <= 1.0:
                raise ValueError("resource fractions must be in [0, 1]")

    @property
    def resource_class(self) -> ResourceClass:
        if max(self.ai_core, self.ai_vector) >= self.memory_bw:
            return ResourceClass.COMPUTE
        return ResourceClass.MEMORY


ENCODE_RESOURCES = ResourceProfile(ai_core=0.85, ai_vector=0.55, memory_bw=0.25)
PREFILL_RESOURCES = ResourceProfile(ai_core=0.90, ai_vector=0.50, memory_bw=0.35)
DECODE_RESOURCES = ResourceProfile(ai_core=0.25, ai_vector=0.30, memory_bw=0.90)


@dataclass(frozen=True)
class InterferenceMatrix:
    """Symmetric slowdown coefficients between resource classes.

    gamma[(a, b)] is the fractional slowdown one instance of class `a`
    suffers per concurrently active co-located instance of class `b`.
    """
    gamma: dict[tuple[ResourceClass, ResourceClass], float] = field(default_factory=dict)

    def __post_init__(self):
        for (a, b), value in self.gamma.items():
            if value < 0:
                raise ValueError("slowdown coefficients must be >= 0")
            mirrored = self.gamma.get((b, a))
            if mirrored is not None and mirrored != value:
                raise ValueError(f"matrix must be symmetric, mismatch for {(a, b)}")

    def coefficient(self, a: ResourceClass, b: ResourceClass) -> float:
        if (a, b) in self.gamma:
            return self.gamma[(a, b)]
        return self.gamma.get((b, a), 0.0)

    @staticmethod
    def from_classes(same_class: float, cross_class: float) -> "InterferenceMatrix":
        if same_class < cross_class:
            raise ValueError("same-class slowdown must be >= cross-class slowdown")
        c, m = ResourceClass.COMPUTE, ResourceClass.MEMORY
        return InterferenceMatrix(gamma={
            (c, c): same_class,
            (m, m): same_class,
            (c, m): cross_class,
        })


def interference_factor(matrix: InterferenceMatrix, me: ResourceProfile,
                        concurrently_active_peers: list[ResourceProfile]) -> float:
    """Multiplier >= 1 on execution time while the given peers are running."""
    my_class = me.resource_class
    total = 0.0
    for peer in concurrently_active_peers:
        total += matrix.coefficient(my_class, peer.resource_class)
    return 1.0 + total


def tp_adjust(base_latency: float, tp_degree: int, layers: int,
              tp_sync_per_layer: float) -> float:
    """Split compute across tp_degree devices, paying per-layer sync when > 1."""
    if tp_degree < 1:
        raise ValueError("tp_degree must be >= 1")
    sync = layers * tp_sync_per_layer if tp_degree > 1 else 0.0
    return base_latency / tp_degree + sync
