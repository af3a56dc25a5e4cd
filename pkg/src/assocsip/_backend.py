"""Selects the compiled kernels when importable, else the numpy fallback.

Set ``ASSOCSIP_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

if os.environ.get("ASSOCSIP_PURE_PYTHON"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

prefix_scan = _impl.prefix_scan
rect_sums = _impl.rect_sums
ma_filter = _impl.ma_filter
