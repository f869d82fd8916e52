"""Backend selection for the survival counting kernels.

The compiled extension is used when it imports; setting the environment
variable ``SYNTHTRIAL_PURE_PYTHON=1`` forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import fallback

BACKENDS = {"python": fallback}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["compiled"] = _ckernels

if _ckernels is not None and os.environ.get("SYNTHTRIAL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    BACKEND = "compiled"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]
km_counts = _impl.km_counts
logrank_counts = _impl.logrank_counts
concordance_counts = _impl.concordance_counts

__all__ = ["BACKEND", "BACKENDS", "km_counts", "logrank_counts", "concordance_counts"]
