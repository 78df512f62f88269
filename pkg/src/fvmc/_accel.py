"""Optional numba acceleration.

Kernels are written in the nopython subset so the same source runs either
compiled or as plain Python. Set ``FVMC_DISABLE_NUMBA=1`` to force the
interpreted path (useful for debugging and for the backend benchmark).
"""

import os

DISABLE_ENV = "FVMC_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

ENABLED = numba is not None and os.environ.get(DISABLE_ENV, "0").lower() not in (
    "1",
    "true",
    "yes",
)


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""

    def wrap(f):
        if not ENABLED:
            return f
        return numba.njit(cache=True, **kwargs)(f)

    if func is not None:
        return wrap(func)
    return wrap


def backend_name():
    return "numba" if ENABLED else "python"
