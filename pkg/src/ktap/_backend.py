"""Kernel backend selection.

Hot loops (RHS evaluation, time stepping) exist twice: as numba-compiled
loop kernels and as vectorized numpy code.  The numba path is used when
numba imports and ``KTAP_BACKEND`` is unset or ``numba``; setting
``KTAP_BACKEND=numpy`` forces the pure-numpy path.
"""
from __future__ import annotations

import os

_requested = os.environ.get("KTAP_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"KTAP_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and _requested == "numba"
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(func):
    """``numba.njit(cache=True)`` on the numba backend, identity otherwise."""
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    return func
