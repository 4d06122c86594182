"""Backend selection for the hot numeric kernels.

Set ``SARDKIT_BACKEND=numpy`` to bypass numba and run the pure-numpy
implementations; the default is ``numba`` when it can be imported.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def backend():
    """Return the active backend name, ``"numba"`` or ``"numpy"``."""
    requested = os.environ.get("SARDKIT_BACKEND", "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"SARDKIT_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and not HAVE_NUMBA:
        return "numpy"
    return requested


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    kwargs.setdefault("cache", True)
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]):
        return args[0]
    return lambda f: f
