"""Selection between numba-compiled kernels and the pure-numpy fallback.

Set ``OPTG_DISABLE_NUMBA=1`` to force the numpy path.  ``OPTG_NUM_THREADS``
caps numba and BLAS thread pools.
"""

import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAS_NUMBA = False


def _flag(name):
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAS_NUMBA and not _flag("OPTG_DISABLE_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def apply_thread_limit(n=None):
    """Cap internal parallelism; reads OPTG_NUM_THREADS when n is None."""
    if n is None:
        raw = os.environ.get("OPTG_NUM_THREADS")
        if not raw:
            return None
        n = int(raw)
    if n < 1:
        raise ValueError("OPTG_NUM_THREADS must be >= 1")
    if HAS_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)
