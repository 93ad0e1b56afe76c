"""Optional numba acceleration.

Hot kernels in :mod:`glyctube.kernels` are compiled with ``numba.njit`` when
numba is importable.  Setting the environment variable
``GLYCTUBE_DISABLE_NUMBA=1`` (before first import) forces the pure-Python/numpy
fallback; the two paths execute identical arithmetic in identical order, so
results are bit-for-bit the same either way.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("GLYCTUBE_DISABLE_NUMBA", "0") != "1"


def maybe_njit(func=None, **kwargs):
    """``numba.njit`` when enabled, identity decorator otherwise."""
    if func is None:
        return lambda f: maybe_njit(f, **kwargs)
    if USE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(func, **kwargs)
    return func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
