"""Kernel backend selection.

Prefers the compiled Cython core and falls back to the numpy
implementations when the extension is unavailable.  Override with
``TWOPHASE_BACKEND=python`` (or ``c`` to require the extension).
"""

from __future__ import annotations

import os

from twophase import _kernels_py

_requested = os.environ.get("TWOPHASE_BACKEND", "auto").lower()

if _requested == "python":
    _impl = _kernels_py
else:
    try:
        from twophase import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "c":
            raise ImportError(
                "TWOPHASE_BACKEND=c but the compiled extension is not built"
            )
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND

local_linear_1d = _impl.local_linear_1d
local_linear_2d = _impl.local_linear_2d
cox_breslow = _impl.cox_breslow
