"""Kernel backend selection.

Hot kernels exist twice: a numba @njit build and a pure-numpy fallback.
The environment variable CIPHER_VIT_NUMBA picks the path:

    CIPHER_VIT_NUMBA=0 (or "off", "numpy")  force the numpy fallback
    CIPHER_VIT_NUMBA=1 (or "on", "numba")   force numba, warn+fall back if missing
    unset / "auto"                          numba when importable, else numpy

The choice is resolved once at import; tests and the benchmark flip it at
runtime through set_numba_enabled(). Matrix products are BLAS (numpy) on
both paths — a jitted triple loop cannot beat it and is not attempted.
"""

import os
import warnings

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_FORCE_OFF = ("0", "off", "false", "numpy")
_FORCE_ON = ("1", "on", "true", "numba")


def _resolve(env_value: str) -> bool:
    v = env_value.strip().lower()
    if v in _FORCE_OFF:
        return False
    if v in _FORCE_ON:
        if not HAVE_NUMBA:  # pragma: no cover
            warnings.warn("CIPHER_VIT_NUMBA requested numba but it is not importable; "
                          "using the numpy fallback")
            return False
        return True
    return HAVE_NUMBA


_numba_enabled = _resolve(os.environ.get("CIPHER_VIT_NUMBA", "auto"))


def numba_enabled() -> bool:
    return _numba_enabled


def set_numba_enabled(flag: bool) -> bool:
    """Flip the backend at runtime; returns the previous setting."""
    global _numba_enabled
    if flag and not HAVE_NUMBA:  # pragma: no cover
        raise RuntimeError("numba backend requested but numba is not importable")
    prev = _numba_enabled
    _numba_enabled = bool(flag)
    return prev
