"""Backend selection for the per-round kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded.  Set ``ADASDBO_KERNELS=python`` to force the fallback or
``ADASDBO_KERNELS=compiled`` to fail loudly when the extension is missing.
"""
import os

_choice = os.environ.get("ADASDBO_KERNELS", "auto").lower()

if _choice == "python":
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        from . import _kernels_py as _impl
        BACKEND = "python"

row_sq_norms = _impl.row_sq_norms
mix_rows = _impl.mix_rows
adaptive_update = _impl.adaptive_update
constant_update = _impl.constant_update
project_rows = _impl.project_rows

__all__ = [
    "BACKEND",
    "row_sq_norms",
    "mix_rows",
    "adaptive_update",
    "constant_update",
    "project_rows",
]
