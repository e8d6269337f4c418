"""Optional numba acceleration.

Each hot kernel exists twice: an explicit-loop version compiled with numba,
and a vectorized numpy version. :func:`dispatch` picks one at import time;
``COGLOAD_DISABLE_NUMBA=1`` forces the numpy path (as does a missing numba).
"""
import os

_FLAG = "COGLOAD_DISABLE_NUMBA"


def numba_disabled():
    return os.environ.get(_FLAG, "0").strip().lower() not in ("", "0", "false", "no")


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAS_NUMBA = _numba is not None
USE_NUMBA = HAS_NUMBA and not numba_disabled()


def njit(func=None, **options):
    """``numba.njit(cache=True, **options)`` when numba is importable, identity otherwise."""
    if func is None:
        return lambda f: njit(f, **options)
    if not HAS_NUMBA:
        return func
    return _numba.njit(cache=True, **options)(func)


def dispatch(loop_impl, numpy_impl):
    """Return the compiled loop kernel or the numpy kernel per the env flag."""
    return loop_impl if USE_NUMBA else numpy_impl
