"""
Backend selection for the hot kernels.

Kernels are written twice: a numba ``@njit`` loop and a vectorized numpy
version.  The numba path is the default when numba imports; setting the
environment variable ``RCMLAB_DISABLE_NUMBA=1`` selects the numpy path.
Both variants stay importable either way so they can be benchmarked
against each other.
"""
import os

_flag = os.environ.get("RCMLAB_DISABLE_NUMBA", "0").strip().lower()
DISABLED = _flag not in ("", "0", "false", "no")

try:
    from numba import njit
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kw):
        if len(args) == 1 and callable(args[0]) and not kw:
            return args[0]
        return lambda f: f

USE_NUMBA = NUMBA_AVAILABLE and not DISABLED


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"
