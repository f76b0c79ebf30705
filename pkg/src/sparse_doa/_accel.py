"""Numba switch.

Hot kernels come in pairs: a loop version compiled with ``numba.njit`` and a
vectorised pure-numpy version. ``SPARSE_DOA_NUMBA=0`` (or a missing numba
install) selects the numpy path everywhere.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _env_flag(name, default="1"):
    return os.environ.get(name, default).strip().lower() not in ("0", "false", "no", "off", "")


USE_NUMBA = HAVE_NUMBA and _env_flag("SPARSE_DOA_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or identity when numba is absent."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def use_numba(override=None):
    """Resolve a per-call backend override against the global flag."""
    if override is None:
        return USE_NUMBA
    return bool(override) and HAVE_NUMBA
