"""Kernel backend selection.

Hot numeric kernels (convolution, pooling) exist twice: a numba-jitted
version and a pure-numpy fallback. The active backend is chosen once at
import time from the FMATTACK_BACKEND environment variable ("numba" or
"numpy"); unset means numba when importable, numpy otherwise. Tests and
benchmarks may switch at runtime via set_backend().
"""

import os

VALID_BACKENDS = ("numba", "numpy")

_ENV_VAR = "FMATTACK_BACKEND"


def _numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _detect():
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice:
        if choice not in VALID_BACKENDS:
            raise ValueError(
                f"{_ENV_VAR}={choice!r} is not one of {VALID_BACKENDS}"
            )
        if choice == "numba" and not _numba_available():
            raise ImportError(f"{_ENV_VAR}=numba but numba is not importable")
        return choice
    return "numba" if _numba_available() else "numpy"


_backend = _detect()


def get_backend():
    return _backend


def set_backend(name):
    """Override the active kernel backend (mainly for tests/benchmarks)."""
    global _backend
    if name not in VALID_BACKENDS:
        raise ValueError(f"unknown backend {name!r}; expected one of {VALID_BACKENDS}")
    if name == "numba" and not _numba_available():
        raise ImportError("numba backend requested but numba is not importable")
    _backend = name
