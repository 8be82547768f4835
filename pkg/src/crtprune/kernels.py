"""Kernel selection: the compiled extension when it imports, else the
pure-Python fallback. Set CRTPRUNE_PURE_PYTHON=1 to force the fallback."""

import os

from . import _kernels_py

BACKEND = "python"
previous_smaller = _kernels_py.previous_smaller
path_min_clocks = _kernels_py.path_min_clocks

if not os.environ.get("CRTPRUNE_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        previous_smaller = _compiled.previous_smaller
        path_min_clocks = _compiled.path_min_clocks
