"""Backend selection for the hot receive-and-combine loop.

The compiled extension is used when it imports; otherwise the numpy
implementation.  Set ``WHFL_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
ota_combine = _kernels_py.ota_combine

if os.environ.get("WHFL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        ota_combine = _compiled.ota_combine
        BACKEND = "cython"

__all__ = ["BACKEND", "ota_combine"]
