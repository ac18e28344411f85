"""Kernel backend selection.

The hot loops (conv2d and maxpool2d, forward and backward) exist twice: a
compiled Cython extension and a pure-numpy fallback. The compiled backend is
preferred when importable; FUNDUSDL_BACKEND=python|compiled forces a choice
(forcing "compiled" raises if the extension is missing). Both backends share
one calling convention and agree numerically to float rounding.
"""

import os

from . import pykernels

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2d_forward",
    "maxpool2d_backward",
    "get_backend",
]

_FORCED = os.environ.get("FUNDUSDL_BACKEND", "").strip().lower()

if _FORCED == "python":
    _impl = pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _FORCED == "compiled":
            raise
        _impl = pykernels
        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward


def get_backend(name=None):
    """Return the kernel module for `name` ("python"/"compiled"/None=active)."""
    if name in (None, BACKEND):
        return _impl
    if name == "python":
        return pykernels
    if name == "compiled":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend: {name!r}")
