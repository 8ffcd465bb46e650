"""Projector backend selection.

Prefers the compiled extension and falls back to the numpy implementation
when it is not built. Set ``UBCT_BACKEND=numpy`` to force the fallback
(used by the parity tests and the benchmark).
"""

import os

from ubct import _kernels_np

if os.environ.get("UBCT_BACKEND", "").lower() == "numpy":
    _impl = _kernels_np
else:
    try:
        from ubct import _projcore as _impl
    except ImportError:
        _impl = _kernels_np

BACKEND = _impl.BACKEND

forward_project = _impl.forward_project
back_project = _impl.back_project


def available_backends():
    """Names of importable backends, compiled first if present."""
    try:
        from ubct import _projcore  # noqa: F401

        return ("cython", "numpy")
    except ImportError:
        return ("numpy",)


def get_backend(name):
    """Return the kernel module for an explicit backend name."""
    if name == "numpy":
        return _kernels_np
    if name == "cython":
        from ubct import _projcore

        return _projcore
    raise ValueError(f"unknown backend {name!r}")
