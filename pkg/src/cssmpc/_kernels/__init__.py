"""Halfspace kernels used by the polytope engine.

The compiled extension is used when it has been built; otherwise the
pure-numpy fallback is selected at import. Set ``CSSMPC_PURE_PYTHON=1`` to
force the fallback.
"""

import os

BACKEND = "python"

if os.environ.get("CSSMPC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from cssmpc._kernels._fm import fm_combine, merge_duplicates, normalize_rows
        from cssmpc._kernels._lp import clarkson, lp_max, lp_max_many, prune
        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    from cssmpc._kernels._fallback import (
        clarkson,
        fm_combine,
        lp_max,
        lp_max_many,
        merge_duplicates,
        normalize_rows,
        prune,
    )

from cssmpc._kernels import _fallback as fallback

__all__ = [
    "BACKEND", "clarkson", "fallback", "fm_combine", "lp_max", "lp_max_many",
    "merge_duplicates", "normalize_rows", "prune",
]
