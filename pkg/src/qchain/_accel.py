"""Backend selection for the hot loops.

The Monte Carlo and discrete-event kernels are written as plain loops that
numba compiles.  Setting ``QCHAIN_BACKEND=numpy`` (before import) disables
compilation: the Monte Carlo engine then runs its vectorised numpy kernels
and the event loop runs as ordinary Python.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

BACKEND = os.environ.get("QCHAIN_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"QCHAIN_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

USE_NUMBA = BACKEND == "numba" and numba is not None


def njit(func):
    """Compile ``func`` with numba when the numba backend is active."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def set_num_threads(n: int) -> None:
    if USE_NUMBA and n >= 1:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
