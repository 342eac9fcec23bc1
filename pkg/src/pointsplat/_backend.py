"""Selects the rasterization kernels at import time.

The compiled Cython core is preferred; if it is missing (no compiler at
install time) the pure-NumPy kernels take over.  Both produce bit-identical
forward results.  Set POINTSPLAT_BACKEND=python or =compiled to force one.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_forced = os.environ.get("POINTSPLAT_BACKEND") or None
if _forced is not None and _forced not in ("python", "compiled"):
    raise ImportError(
        f"POINTSPLAT_BACKEND must be 'python' or 'compiled', got {_forced!r}"
    )

_active = _forced or ("compiled" if _compiled is not None else "python")
if _active not in _BACKENDS:
    raise ImportError(
        "POINTSPLAT_BACKEND=compiled but the pointsplat._kernels extension "
        "is not built; reinstall with a C compiler available"
    )


def active_backend() -> str:
    return _active


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def kernels(name: str | None = None):
    """Kernel module for `name` (default: the active backend)."""
    if name is None:
        name = _active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"backend {name!r} not available (have {available_backends()})"
        ) from None
