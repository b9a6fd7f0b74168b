"""Numba switch.

Set ``MRTMP_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
The flag is read once at import time.
"""
import os

DISABLED = os.environ.get("MRTMP_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    _njit = None
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity decorator otherwise."""
    if HAS_NUMBA:
        return _njit(*args, cache=True, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def py_func(fn):
    """Return the uncompiled Python function behind a kernel."""
    return getattr(fn, "py_func", fn)
