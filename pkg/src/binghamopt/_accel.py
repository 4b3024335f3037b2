"""Optional numba acceleration.

The hot assembly kernels exist twice: a numba ``@njit`` loop version and a
vectorised numpy version.  Set ``BINGHAMOPT_NUMBA=0`` to force the numpy path
(also used automatically when numba cannot be imported).
"""
import os

try:  # pragma: no cover - import guard
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def _env_enabled():
    flag = os.environ.get("BINGHAMOPT_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _env_enabled()


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(func):
        return func

    return wrap
