"""Kernel dispatch: compiled extension when available, NumPy otherwise.

Set MASKFUSE_DISABLE_EXT=1 to force the NumPy fallback (used by the
benchmark and the backend-parity tests).  Both backends are bit-identical;
only throughput differs.
"""
from __future__ import annotations

import os

if os.environ.get("MASKFUSE_DISABLE_EXT"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"

rle_encode = _impl.rle_encode
rle_decode = _impl.rle_decode
paint_first_wins = _impl.paint_first_wins
confusion_update = _impl.confusion_update


def backend() -> str:
    """Name of the active kernel backend: 'cython' or 'python'."""
    return BACKEND
