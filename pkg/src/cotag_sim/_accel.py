"""Kernel backend selection.

Hot byte-level kernels ship in two variants: numba @njit loops and a pure
numpy implementation. The numpy path is selected when numba is missing or
when the environment variable COTAG_SIM_NO_NUMBA is set to a truthy value
("1", "true", "yes"). `benchmarks/bench_gf.py` compares the two.
"""

import os

_ENV_FLAG = "COTAG_SIM_NO_NUMBA"

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    HAVE_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get(_ENV_FLAG, "").strip().lower() in ("1", "true", "yes")


USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def njit(*args, **kwargs):
    """numba.njit with caching, or a no-op decorator on the numpy path."""
    if USE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba_njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
