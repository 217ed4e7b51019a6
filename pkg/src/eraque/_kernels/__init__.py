"""Kernel dispatch: compiled core when available, numpy fallback otherwise.

Set ``ERAQUE_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"

if os.environ.get("ERAQUE_PURE_PYTHON") != "1":
    try:
        from . import _core as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

sep_filter_valid = _impl.sep_filter_valid
tau_b_counts = _impl.tau_b_counts
hard_pair_stats = _impl.hard_pair_stats

__all__ = ["BACKEND", "sep_filter_valid", "tau_b_counts", "hard_pair_stats"]
