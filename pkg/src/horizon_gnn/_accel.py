"""Selects between numba-compiled kernels and the pure-numpy fallback.

Set ``HORIZON_GNN_DISABLE_NUMBA=1`` before import to force the numpy path.
"""
import os

_flag = os.environ.get("HORIZON_GNN_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False


def njit(fn):
    """``numba.njit(cache=True)`` when numba is active, identity otherwise."""
    if HAS_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def set_threads(n):
    if HAS_NUMBA and n is not None and n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
