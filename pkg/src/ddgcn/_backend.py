"""Numba / pure-numpy backend switch.

Set ``DDGCN_DISABLE_NUMBA=1`` to force the numpy fallback kernels. The flag is
read once at import time.
"""
import os

_FALSY = ("", "0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and (
    os.environ.get("DDGCN_DISABLE_NUMBA", "0").strip().lower() in _FALSY
)


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if not NUMBA_AVAILABLE:
        return func
    return numba.njit(cache=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
