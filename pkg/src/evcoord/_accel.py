"""Numba selection.

Set ``EVCOORD_DISABLE_NUMBA=1`` to force the vectorized numpy kernels even
when numba is importable.
"""
import os

_FLAG = os.environ.get("EVCOORD_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in {"1", "true", "yes", "on"}

try:
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _njit = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLED_BY_ENV


def njit(func):
    """Compile ``func`` in nopython mode when numba is present.

    The plain Python function is always available as ``.py_func`` so tests can
    exercise the loop kernels without the JIT.
    """
    if not HAS_NUMBA:
        func.py_func = func
        return func
    return _njit(cache=True)(func)
