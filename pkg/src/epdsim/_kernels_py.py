"""Pure-Python transfer-planner kernels.

Fallback for the compiled extension; operation order matches `_kernels.pyx`
exactly so both backends produce bit-identical results.
"""

from __future__ import annotations


def kv_exposed_busy(layers: int, group_size: int, per_layer_compute: float,
                    per_layer_payload: float, handshake: float):
    """Serialized-link schedule metrics for grouped layer-wise transmission.

    Group k becomes ready when its last layer's compute finishes; the link
    carries one group at a time.  Returns (exposed_ms, link_busy_ms,
    last_transfer_end_ms).
    """
    prev_end = 0.0
    busy = 0.0
    first = 0
    while first < layers:
        size = group_size if first + group_size <= layers else layers - first
        ready = (first + size) * per_layer_compute
        duration = handshake + size * per_layer_payload
        start = ready if ready > prev_end else prev_end
        prev_end = start + duration
        busy += duration
        first += size
    compute_end = layers * per_layer_compute
    exposed = prev_end - compute_end
    if exposed < 0.0:
        exposed = 0.0
    return exposed, busy, prev_end


def best_group(layers: int, per_layer_compute: float, per_layer_payload: float,
               handshake: float):
    """Group size minimizing exposed time; ties break toward the smaller size."""
    best_g = 1
    best_exposed, _, _ = kv_exposed_busy(layers, 1, per_layer_compute,
                                         per_layer_payload, handshake)
    for g in range(2, layers + 1):
        exposed, _, _ = kv_exposed_busy(layers, g, per_layer_compute,
                                        per_layer_payload, handshake)
        if exposed < best_exposed:
            best_exposed = exposed
            best_g = g
    return best_g, best_exposed
