"""Backend selection for the coupled path kernel.

The compiled extension is used when it imports; otherwise the numpy
fallback.  ``WMLMC_BACKEND=python`` forces the fallback,
``WMLMC_BACKEND=cython`` makes a missing extension an error.
"""
from __future__ import annotations

import os

from . import _kernels_py

_requested = os.environ.get("WMLMC_BACKEND", "").strip().lower()

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None
    if _requested == "cython":
        raise

if _compiled is not None and _requested != "python":
    coupled_paths = _compiled.coupled_paths
    BACKEND = "cython"
else:
    coupled_paths = _kernels_py.coupled_paths
    BACKEND = "python"


def available_backends():
    """Names of the kernels importable in this environment."""
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def get_kernel(name):
    """Return the ``coupled_paths`` function of a named backend."""
    if name == "python":
        return _kernels_py.coupled_paths
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernel not built")
        return _compiled.coupled_paths
    raise ValueError(f"unknown backend {name!r}")
