"""Pick the compiled kernels when they import, else the numpy ones.

Set ``DSWAP_KERNELS=python`` to force the fallback.
"""
from __future__ import annotations

import os

BACKEND = "python"
if os.environ.get("DSWAP_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = None
else:
    _impl = None

if _impl is None:
    from . import _kernels_py as _impl

apply_1q = _impl.apply_1q
apply_mcx = _impl.apply_mcx
apply_mcswap = _impl.apply_mcswap
apply_phase = _impl.apply_phase
prob_one = _impl.prob_one
collapse_remove = _impl.collapse_remove
