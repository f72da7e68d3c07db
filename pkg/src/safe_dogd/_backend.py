"""Kernel backend selection.

Hot loops (Dykstra sweeps, cone bisection, the online round loop) have two
implementations: a numba ``@njit`` version and a pure-numpy version. The
numba path is used when numba imports cleanly and ``SAFE_DOGD_NUMBA`` is not
set to ``0``. Both paths are kept importable so tests and the benchmark can
compare them directly.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("SAFE_DOGD_NUMBA", "1").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(fn):
    """``numba.njit(cache=True)`` when numba is available, identity otherwise."""
    if not HAVE_NUMBA:
        return fn
    import numba

    return numba.njit(cache=True, nogil=True)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
