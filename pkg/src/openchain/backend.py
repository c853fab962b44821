"""Kernel backend selection.

The compiled Cython extension is used when importable; otherwise the pure
Python twin takes over.  Set OPENCHAIN_PURE_PYTHON=1 to force the fallback.
Both backends draw from the same bit stream with identical arithmetic, so the
choice never changes simulation output, only speed.
"""

from __future__ import annotations

import os
from typing import Optional

from . import _pykernels

_COMPILED = None
if not os.environ.get("OPENCHAIN_PURE_PYTHON"):
    try:
        from . import _ckernels as _COMPILED  # type: ignore[attr-defined]
    except ImportError:
        _COMPILED = None

_ACTIVE = _COMPILED if _COMPILED is not None else _pykernels


def active_backend() -> str:
    """Name of the backend used by default ("compiled" or "python")."""
    return _ACTIVE.BACKEND_NAME


def available_backends() -> tuple:
    names = ["python"]
    if _COMPILED is not None:
        names.append("compiled")
    return tuple(names)


def get_kernels(name: Optional[str] = None):
    """Kernel module by name; None selects the active backend."""
    if name is None:
        return _ACTIVE
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _COMPILED is None:
            raise ValueError("compiled backend is not available in this install")
        return _COMPILED
    raise ValueError(f"unknown backend {name!r}")
