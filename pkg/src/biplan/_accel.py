"""Backend selection for the numeric kernels.

Set ``BIPLAN_DISABLE_NUMBA=1`` to force the pure-numpy implementations even
when numba is importable. The flag is read once at import time.
"""
import os

_DISABLED = os.environ.get("BIPLAN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def njit(func):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise.

    The decorated function is always compiled when numba exists, so the numba
    path can be benchmarked against the numpy path in the same process even if
    the env flag selected numpy for dispatch.
    """
    if _numba is None:
        return func
    return _numba.njit(cache=True, nogil=True)(func)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
