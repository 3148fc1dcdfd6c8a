"""Numba switch.

Set ``ACTSIM_NO_NUMBA=1`` to force the pure-numpy path (also used automatically
when numba is not importable).
"""

import os

_disabled = os.environ.get("ACTSIM_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    _njit = None
    HAVE_NUMBA = False


def njit(func):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if HAVE_NUMBA:
        return _njit(cache=True)(func)
    return func


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
