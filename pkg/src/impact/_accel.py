"""Backend switch for the hot kernels.

Kernels are compiled with numba when it is importable. Setting
``IMPACT_NO_NUMBA=1`` in the environment forces the numpy/scipy code paths,
which compute the same quantities (up to float rounding) without a JIT.
"""
from __future__ import annotations

import os

_FLAG = "IMPACT_NO_NUMBA"


def _disabled_by_env() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    if _disabled_by_env():
        raise ImportError(f"{_FLAG} is set")
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:
    _numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op decorator without numba."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)


def backend_name() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
