"""Kernel backend selection.

The compiled kernel (``cachebandit._core``) is preferred; setting
``CACHEBANDIT_PURE_PYTHON=1`` or a failed import selects the Python one.
"""
import os

from . import _core_py

_compiled = None
if not os.environ.get("CACHEBANDIT_PURE_PYTHON"):
    try:
        from . import _core as _compiled
    except ImportError:
        _compiled = None

DEFAULT_BACKEND = "compiled" if _compiled is not None else "python"


def available_backends() -> list[str]:
    return ["compiled", "python"] if _compiled is not None else ["python"]


def kernel_class(backend: str | None = None):
    backend = backend or DEFAULT_BACKEND
    if backend == "python":
        return _core_py.EpisodeKernel
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not built; reinstall with Cython available")
        return _compiled.EpisodeKernel
    raise ValueError(f"unknown backend {backend!r}")
