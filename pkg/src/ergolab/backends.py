"""Kernel backend selection: compiled extension if importable, numpy twin
otherwise.  ``ERGOLAB_BACKEND=python`` forces the fallback; ``=compiled``
makes a missing extension a hard error."""

from __future__ import annotations

import os

from . import _pykernel

_requested = os.environ.get("ERGOLAB_BACKEND", "").strip().lower()
if _requested not in ("", "compiled", "python"):
    raise RuntimeError(f"ERGOLAB_BACKEND must be 'compiled' or 'python', got {_requested!r}")

_core = None
if _requested != "python":
    try:
        from . import _core  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "compiled":
            raise
        _core = None

BACKEND = "compiled" if _core is not None else "python"
kernel = _core if _core is not None else _pykernel


def available_backends() -> list[str]:
    names = ["python"]
    if _core is not None:
        names.insert(0, "compiled")
    return names


def get_kernel(name: str | None = None):
    """Kernel module by name ('compiled' | 'python'); default = selected."""
    if name is None:
        return kernel
    if name == "python":
        return _pykernel
    if name == "compiled":
        if _core is None:
            raise RuntimeError("compiled backend not available")
        return _core
    raise ValueError(f"unknown backend {name!r}")
