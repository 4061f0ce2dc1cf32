"""Backend selection for the time-domain kernels.

The compiled extension is used when it imports; set ``PAULTRAP_PURE_PYTHON=1``
to force the reference implementation.
"""
import os

from . import _kernels_py

if os.environ.get("PAULTRAP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
rk4_integrate = _impl.rk4_integrate
field_at = _impl.field_at


def get_backend(name=None):
    """Return the kernel module for ``"cython"``, ``"python"`` or the active default."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
