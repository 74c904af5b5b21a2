"""Kernel backend selection.

The compiled extension ``pregrasp._core`` is used when it imports; set
``PREGRASP_BACKEND=python`` to force the numpy implementation.
"""

import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

try:
    from . import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None

_KERNELS = {"python": _fallback}
if _core is not None:
    _KERNELS["compiled"] = _core


def available() -> list:
    return sorted(_KERNELS)


def get(name: str | None = None):
    """Return a kernel module by name, or the active one."""
    if name is None:
        name = NAME
    try:
        return _KERNELS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {available()}") from None


_requested = os.environ.get("PREGRASP_BACKEND", "").strip().lower()
if _requested and _requested not in _KERNELS:
    log.warning("requested backend %r unavailable, falling back", _requested)
    _requested = ""
NAME = _requested or ("compiled" if _core is not None else "python")
kernel = _KERNELS[NAME]
