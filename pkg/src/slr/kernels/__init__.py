"""Physics and advantage kernels, compiled when available.

The Cython extension ``_physics`` is used if it was built; otherwise the
numpy implementation in :mod:`physics_py` is used.  Setting
``SLR_PURE_PYTHON=1`` forces the numpy path.
"""

from __future__ import annotations

import os

from . import physics_py

BACKEND = "python"
_impl = physics_py
if os.environ.get("SLR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _physics as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = physics_py

terrain_heights = _impl.terrain_heights
wheel_ground = _impl.wheel_ground
integrate = _impl.integrate
gae = _impl.gae


def backend(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"`` explicitly."""
    if name == "python":
        return physics_py
    if name == "cython":
        from . import _physics

        return _physics
    raise ValueError(f"unknown kernel backend {name!r}")
