"""Kernel backend selection: numba JIT when available, pure numpy otherwise.

Set LOBDESK_BACKEND=numpy to force the numpy path even when numba is
installed (useful for debugging and for the benchmark comparison), or
LOBDESK_BACKEND=numba to require the JIT path (raises if numba is missing).
Anything else, or no value, means "numba if importable".

Hot loops live in kernels.py and are written twice against the same
signature; this module only decides which one runs and provides a `njit`
that degrades to a no-op decorator so the numba source always imports.
"""

from __future__ import annotations

import os

try:
    import numba
    from numba import njit  # noqa: F401
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via LOBDESK_BACKEND=numpy
    numba = None
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        """Pass-through decorator standing in for numba.njit."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func
        return wrap


def backend_name() -> str:
    """Resolve the active backend: 'numba' or 'numpy'."""
    want = os.environ.get("LOBDESK_BACKEND", "").strip().lower()
    if want == "numpy":
        return "numpy"
    if want == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("LOBDESK_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if HAS_NUMBA else "numpy"


USE_NUMBA = backend_name() == "numba"
