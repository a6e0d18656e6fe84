"""Numba switch.

Set ``DUEL_DISABLE_JIT=1`` to run every kernel through its pure-numpy
fallback. The flag is read once at import time.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}

JIT_REQUESTED = os.environ.get("DUEL_DISABLE_JIT", "").strip().lower() in _FALSY

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_JIT = JIT_REQUESTED and numba is not None


def njit(func):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise.

    Kernels are always compiled when numba exists, so the benchmark can
    compare both paths in one process; ``USE_JIT`` only decides which one the
    library dispatches to.
    """
    if numba is None:  # pragma: no cover
        return func
    return numba.njit(cache=True)(func)
