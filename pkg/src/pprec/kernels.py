"""Kernel backend selection.

The compiled extension is used when it imports; setting ``PPREC_PURE_PYTHON=1``
forces the numpy/scipy fallback. Both expose the same functions and return
identical arrays.
"""

import os

from pprec import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("PPREC_PURE_PYTHON"):
    try:
        from pprec import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

ACTION_INSERT = _fallback.ACTION_INSERT
ACTION_FORWARD = _fallback.ACTION_FORWARD
ACTION_DELIVER = _fallback.ACTION_DELIVER
STATUS_OK = _fallback.STATUS_OK
STATUS_TIMEOUT = _fallback.STATUS_TIMEOUT

mix64 = _fallback.mix64
mix64_array = _fallback.mix64_array
MASK64 = _fallback.MASK64
GOLDEN = _fallback.GOLDEN


def get(name, backend=None):
    """Return kernel ``name`` from ``backend`` ("cython", "python" or the active one)."""
    if backend is None:
        return getattr(_impl, name)
    if backend == "python":
        return getattr(_fallback, name)
    if backend == "cython":
        from pprec import _kernels

        return getattr(_kernels, name)
    raise ValueError(f"unknown kernel backend {backend!r}")


def available_backends():
    out = ["python"]
    try:
        from pprec import _kernels  # noqa: F401

        out.append("cython")
    except ImportError:
        pass
    return out
