"""Kernel backend selection.

The hot inner loops exist twice: numba-compiled (`nb_kernels`) and pure
numpy (`np_kernels`). The active backend is chosen once at import time
from the MQPOOL_BACKEND environment variable:

    MQPOOL_BACKEND=numba   force numba, fail if it cannot be imported
    MQPOOL_BACKEND=numpy   force the pure-numpy fallback
    unset / auto           numba when importable, else numpy

`impl` is the active module; `backend_name()` reports which one won.
Both backends are importable directly for parity tests and benchmarks.
"""

from __future__ import annotations

import os

from ..errors import ConfigError
from . import np_kernels


def _select():
    choice = os.environ.get("MQPOOL_BACKEND", "auto").strip().lower()
    if choice in ("numpy", "np"):
        return np_kernels, "numpy"
    if choice in ("numba", "nb", "auto", ""):
        try:
            from . import nb_kernels

            return nb_kernels, "numba"
        except ImportError:
            if choice in ("numba", "nb"):
                raise ConfigError("MQPOOL_BACKEND=numba but numba is not importable")
            return np_kernels, "numpy"
    raise ConfigError(f"unknown MQPOOL_BACKEND value {choice!r}")


impl, _backend = _select()


def backend_name() -> str:
    return _backend
