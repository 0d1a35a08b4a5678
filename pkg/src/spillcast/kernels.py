"""Kernel backend selection.

The compiled extension is used when importable.  Setting the environment
variable ``SPILLCAST_PURE_PYTHON=1`` forces the pure-Python fallback.
"""

import os

from . import _walkcore_py

try:
    if os.environ.get("SPILLCAST_PURE_PYTHON", "").strip() not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _walkcore as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _walkcore_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"


def get_backend(name: str | None = None):
    """Kernel module by name; ``None`` gives the active backend."""
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable (have {sorted(BACKENDS)})") from None


random_walks = get_backend().random_walks
sgns_train = get_backend().sgns_train
