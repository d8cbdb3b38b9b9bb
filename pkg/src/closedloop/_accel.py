"""Backend selection for the numeric kernels.

Set ``CLOSEDLOOP_NUMBA=0`` to force the pure-numpy path (useful for debugging
and for the backend comparison in ``benchmarks/``). Numba is used by default
when it imports cleanly.
"""
import os

_flag = os.environ.get("CLOSEDLOOP_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _flag not in ("0", "false", "no", "off")

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False
    _njit = None

NUMBA_ENABLED = NUMBA_AVAILABLE and NUMBA_REQUESTED


def njit(fn):
    """Compile ``fn`` with ``numba.njit(cache=True)`` if numba is importable.

    Compilation is lazy, so the loop kernels cost nothing when the numpy
    backend is selected.
    """
    if NUMBA_AVAILABLE:
        return _njit(cache=True)(fn)
    return fn


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
