"""Backend selection for the hot loops.

The compiled extension is used when it was built; setting
``ADAPTIVE_TICKETS_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("ADAPTIVE_TICKETS_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback

masked_adam_update = _impl.masked_adam_update
pair_counts = _impl.pair_counts

__all__ = ["BACKEND", "masked_adam_update", "pair_counts"]
