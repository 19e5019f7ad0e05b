"""Kernel backend selection.

The compiled extension is used when it imports; setting ``SEGTRICKS_PURE=1``
forces the numpy fallback (used by the benchmark and the equivalence tests).
"""
import os

from . import _pykernels as pure

compiled = None
if os.environ.get("SEGTRICKS_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

kernels = compiled if compiled is not None else pure
BACKEND = "cython" if compiled is not None else "python"
