"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback is loaded. ``RMPC_BACKEND=python`` forces the fallback.
"""
import logging
import os

from rmpc import _kernels_py

log = logging.getLogger(__name__)


def load(name=None):
    """Return ``(backend_name, module)`` for ``name`` in {"cython", "python", None}."""
    name = name or os.environ.get("RMPC_BACKEND", "").strip().lower() or None
    if name == "python":
        return "python", _kernels_py
    try:
        from rmpc import _kernels
    except ImportError as exc:
        if name == "cython":
            raise
        log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
        return "python", _kernels_py
    return "cython", _kernels


BACKEND, kernels = load()
