"""Optional numba acceleration.

Set ``SWHAWKES_NUMBA=0`` before import to force the pure-numpy kernels.
"""

import os

_flag = os.environ.get("SWHAWKES_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    from numba import njit as _numba_njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False
    _numba_njit = None

USE_NUMBA = NUMBA_AVAILABLE and _requested


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or a no-op decorator when numba is off."""
    if _numba_njit is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda func: func
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return _numba_njit(*args, **kwargs)
