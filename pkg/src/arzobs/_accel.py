"""Optional numba acceleration.

Set ``ARZOBS_DISABLE_NUMBA=1`` before import to run the pure-numpy kernels.
"""
import os

_flag = os.environ.get("ARZOBS_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _flag not in ("", "0", "false", "no")

try:
    import numba as _numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op decorator without numba."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)
