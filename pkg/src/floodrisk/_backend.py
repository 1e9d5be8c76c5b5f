"""Kernel backend selection.

The compiled ``_kernels`` extension is used when importable; set
``FLOODRISK_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os
import warnings

from . import _fallback

fallback = _fallback
compiled = None

if not os.environ.get("FLOODRISK_PURE_PYTHON"):
    try:
        from . import _kernels as compiled
    except ImportError:  # pragma: no cover - depends on build
        warnings.warn("floodrisk compiled kernels unavailable; using numpy fallback",
                      RuntimeWarning, stacklevel=2)

impl = compiled if compiled is not None else fallback

logp = impl.logp
logp_grad = impl.logp_grad
trajectory = impl.trajectory
ring_contains = impl.ring_contains
NAME = impl.NAME


def available():
    """Names of the importable backends."""
    return [b.NAME for b in (compiled, fallback) if b is not None]


def get(name):
    """Return a backend module by name (``"cython"`` or ``"numpy"``)."""
    for b in (compiled, fallback):
        if b is not None and b.NAME == name:
            return b
    raise KeyError(f"backend {name!r} not available")
