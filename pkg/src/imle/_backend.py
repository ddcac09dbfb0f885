"""Select the MAP kernel implementation at import time.

Set ``IMLE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("IMLE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _pykernels
    else:
        BACKEND = "cython"
else:
    _impl = _pykernels

topk_mask = _impl.topk_mask
dijkstra_grid = _impl.dijkstra_grid

__all__ = ["BACKEND", "topk_mask", "dijkstra_grid"]
