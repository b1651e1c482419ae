"""Kernel backend selection: compiled extension when present, Python otherwise."""

try:
    from ._kernels import best_group, kv_exposed_busy

    BACKEND = "cython"
except ImportError:
    from ._kernels_py import best_group, kv_exposed_busy

    BACKEND = "python"

__all__ = ["best_group", "kv_exposed_busy", "BACKEND"]
