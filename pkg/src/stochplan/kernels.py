"""Kernel back-end selection.

The compiled extension is used when importable; set ``STOCHPLAN_PURE_PYTHON=1``
to force the NumPy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("STOCHPLAN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

exit_scan = _impl.exit_scan
hjb_step_affine = _impl.hjb_step_affine
hjb_step_lattice = _impl.hjb_step_lattice


def backend(name: str):
    """Return the kernel module for ``"python"`` or ``"compiled"`` (ImportError if unavailable)."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(name)
