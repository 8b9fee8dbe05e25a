"""Numba switch.

Hot kernels are compiled with numba unless ``EULERCLT_DISABLE_NUMBA`` is set
to a truthy value (or numba is missing), in which case the pure-numpy
implementations in :mod:`eulerclt.kernels` are used.
"""
import os

_FALSY = ("", "0", "false", "no", "off")

NUMBA_REQUESTED = os.environ.get("EULERCLT_DISABLE_NUMBA", "0").strip().lower() in _FALSY

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = NUMBA_REQUESTED and HAVE_NUMBA


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is available, else return it untouched."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=False, nogil=True)(fn)


def default_threads():
    """Thread count from ``EULERCLT_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("EULERCLT_THREADS", "1")))
    except ValueError:
        return 1
