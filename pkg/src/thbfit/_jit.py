"""Optional numba acceleration.

Set ``THBFIT_USE_NUMBA=0`` before import to force the pure-numpy kernels.
The numpy path is also used when numba cannot be imported.
"""

from __future__ import annotations

import os

_flag = os.environ.get("THBFIT_USE_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _requested


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    import numba

    return numba.njit(*args, **kwargs)
