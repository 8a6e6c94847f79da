"""Backend selection for the hot loops.

``IMPULSE_GAME_BACKEND=numpy`` forces the pure-numpy implementations even when
numba is importable; ``numba`` (the default when available) compiles them.
"""

from __future__ import annotations

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

BACKENDS = ("numba", "numpy")


def default_backend() -> str:
    env = os.environ.get("IMPULSE_GAME_BACKEND", "").strip().lower()
    if env:
        if env not in BACKENDS:
            raise ValueError(f"IMPULSE_GAME_BACKEND must be one of {BACKENDS}, got {env!r}")
        if env == "numba" and not HAVE_NUMBA:
            raise RuntimeError("IMPULSE_GAME_BACKEND=numba but numba is not installed")
        return env
    return "numba" if HAVE_NUMBA else "numpy"


def resolve_backend(backend: str | None) -> str:
    if backend is None:
        return default_backend()
    backend = backend.lower()
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def maybe_njit(func):
    """Compile ``func`` with numba if available, keeping the Python original.

    The uncompiled function stays reachable as ``.py_func`` in both cases so the
    numpy backend can call the same scalar code.
    """
    if not HAVE_NUMBA:
        func.py_func = func
        return func
    return numba.njit(cache=True, nogil=True)(func)


def thread_count() -> int:
    raw = os.environ.get("IMPULSE_GAME_THREADS", "")
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError("IMPULSE_GAME_THREADS must be >= 1")
    return n
