"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise, or
when ``PROMPTDET3D_PURE_PYTHON=1`` is set, the pure-Python ``_pykernels``
module is used. Both expose the same functions.
"""
from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("PROMPTDET3D_PURE_PYTHON", "") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

box_intersection_volume = _impl.box_intersection_volume
raycast_cuboids = _impl.raycast_cuboids

__all__ = ["BACKEND", "box_intersection_volume", "raycast_cuboids"]
