"""Kernel backend selection.

At import the compiled core (``covaset._core``) is preferred when present;
otherwise the numpy fallback is used. ``COVASET_BACKEND=python`` or
``COVASET_BACKEND=compiled`` pins the choice (pinning ``compiled`` without
the extension installed is an error). Both backends are deterministic;
results across them agree to floating-point reassociation error only, so
reproductions of a given run should keep the backend fixed.
"""

from __future__ import annotations

import os

from . import _kernels_np

try:
    from . import _core
except ImportError:
    _core = None

_BACKENDS = {"python": _kernels_np}
if _core is not None:
    _BACKENDS["compiled"] = _core


def available() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def _initial() -> str:
    forced = os.environ.get("COVASET_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"COVASET_BACKEND={forced!r} requested but only "
                f"{available()} are available"
            )
        return forced
    return "compiled" if _core is not None else "python"


_active = _initial()


def active() -> str:
    return _active


def use(name: str) -> None:
    """Switch the active backend (mainly for tests and benchmarks)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available()}")
    _active = name


def kernels():
    return _BACKENDS[_active]
