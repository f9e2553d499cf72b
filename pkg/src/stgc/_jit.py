"""Optional numba acceleration.

Set ``STGC_NO_NUMBA=1`` to force the pure-numpy code paths; the flag is
read once at import time. When numba is missing the package degrades to
the numpy paths automatically.
"""

import os

NUMBA_ENABLED = os.environ.get("STGC_NO_NUMBA", "").strip() not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        from numba import njit, prange
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap

    prange = range


def set_worker_threads(n):
    """Cap numba's thread pool; no-op on the numpy paths."""
    if NUMBA_ENABLED and n is not None and n >= 1:
        import numba

        numba.set_num_threads(n)
