"""Backend selection for the inner loops.

The compiled extension is used when it imports; otherwise the numpy
fallback is. Set ``CPSFALSIFY_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("CPSFALSIFY_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

window_min = _impl.window_min
window_max = _impl.window_max
until = _impl.until
radical_inverse = _impl.radical_inverse
