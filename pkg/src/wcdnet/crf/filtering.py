"""Backend selection for the non-differentiable message passing kernel.

The compiled extension is used when it was built; setting
``WCDNET_PURE_PYTHON=1`` forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _filter_py

BACKEND = "python"
truncated_filter = _filter_py.truncated_filter

if os.environ.get("WCDNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _filter as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        truncated_filter = _compiled.truncated_filter
        BACKEND = "compiled"


def get_filter(backend: str | None = None):
    """Return the kernel for ``backend`` ('compiled', 'python' or None for the default)."""
    if backend is None:
        return truncated_filter
    if backend == "python":
        return _filter_py.truncated_filter
    if backend == "compiled":
        from . import _filter

        return _filter.truncated_filter
    raise ValueError(f"unknown backend {backend!r}")
