"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it was built and imports
cleanly; otherwise (or with ``BILEVELKIT_PURE_PYTHON=1``) the numpy versions
in ``_pykernels`` are used.  ``BACKEND`` names the active one.
"""
import os

from . import _pykernels

if os.environ.get("BILEVELKIT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

wlogistic_value = _impl.wlogistic_value
wlogistic_grad = _impl.wlogistic_grad
wlogistic_hvp = _impl.wlogistic_hvp
logistic_cross = _impl.logistic_cross

__all__ = ["BACKEND", "wlogistic_value", "wlogistic_grad", "wlogistic_hvp", "logistic_cross"]
