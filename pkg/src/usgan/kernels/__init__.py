"""Backend selection for the patch-extraction hot kernels.

The compiled Cython extension is used when available; otherwise the NumPy
fallback.  ``USGAN_KERNEL_BACKEND`` forces the choice: ``cython``,
``python`` or ``auto`` (default).
"""

import os

from . import pykernels

_requested = os.environ.get("USGAN_KERNEL_BACKEND", "auto").lower()

if _requested not in ("auto", "cython", "python"):
    raise ValueError(f"unknown USGAN_KERNEL_BACKEND: {_requested!r}")

if _requested == "python":
    _impl = pykernels
    BACKEND = "python"
else:
    try:
        from . import _fastkernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        _impl = pykernels
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
out_extent = pykernels.out_extent
