# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled transfer-planner kernels.

Mirrors `_kernels_py` operation for operation; the schedule arithmetic is the
hottest loop in the simulator (it runs once per request per group-size
candidate), so it lives here when a compiler is available.
"""


cpdef tuple kv_exposed_busy(int layers, int group_size, double per_layer_compute,
                            double per_layer_payload, double handshake):
    cdef double prev_end = 0.0
    cdef double busy = 0.0
    cdef double ready, duration, start, compute_end, exposed
    cdef int first = 0
    cdef int size
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


cpdef tuple best_group(int layers, double per_layer_compute,
                       double per_layer_payload, double handshake):
    cdef int best_g = 1
    cdef int g
    cdef double best_exposed, exposed
    best_exposed = _exposed_only(layers, 1, per_layer_compute,
                                 per_layer_payload, handshake)
    for g in range(2, layers + 1):
        exposed = _exposed_only(layers, g, per_layer_compute,
                                per_layer_payload, handshake)
        if exposed < best_exposed:
            best_exposed = exposed
            best_g = g
    return best_g, best_exposed


cdef double _exposed_only(int layers, int group_size, double per_layer_compute,
                          double per_layer_payload, double handshake):
    cdef double prev_end = 0.0
    cdef double ready, duration, start, compute_end, exposed
    cdef int first = 0
    cdef int size
    while first < layers:
        size = group_size if first + group_size <= layers else layers - first
        ready = (first + size) * per_layer_compute
        duration = handshake + size * per_layer_payload
        start = ready if ready > prev_end else prev_end
        prev_end = start + duration
        first += size
    compute_end = layers * per_layer_compute
    exposed = prev_end - compute_end
    if exposed < 0.0:
        exposed = 0.0
    return exposed
