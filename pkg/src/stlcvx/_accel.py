"""JIT switch for the numeric kernels.

Set ``STLCVX_DISABLE_NUMBA=1`` to run every kernel through its pure-numpy
implementation instead of the numba-compiled one.
"""

import os

_FLAG = os.environ.get("STLCVX_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged.

    The compiled variant is always built when numba imports, so tests and the
    benchmark can compare both paths regardless of ``USE_NUMBA``.
    """
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


__all__ = ["HAVE_NUMBA", "USE_NUMBA", "njit"]
