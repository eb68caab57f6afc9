"""Numba switch.

Kernels in :mod:`maskclr.kernels` come in two flavours: an ``@njit`` loop and a
vectorised numpy fallback. The loop versions are used when numba imports and
``MASKCLR_NUMBA`` is not set to a false value (``0``, ``false``, ``no``, ``off``).
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None

_FALSE = {"0", "false", "no", "off"}

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("MASKCLR_NUMBA", "1").strip().lower() not in _FALSE


def njit(fn):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    if numba is None:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


def set_backend(use_numba):
    """Toggle the kernel backend at runtime (benchmarks and tests)."""
    global USE_NUMBA
    if use_numba and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    USE_NUMBA = bool(use_numba)


def backend():
    return "numba" if USE_NUMBA else "numpy"
