"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``PATHFL_KERNELS=python`` to force the fallback.
"""

import os

from pathfl import _fallback

KERNEL_NAMES = (
    "conv3x3_forward",
    "conv3x3_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "upsample2_forward",
    "upsample2_backward",
)


def _load_compiled():
    if os.environ.get("PATHFL_KERNELS", "").lower() == "python":
        return None
    try:
        from pathfl import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
_impl = _compiled if _compiled is not None else _fallback
BACKEND = "cython" if _compiled is not None else "python"

conv3x3_forward = _impl.conv3x3_forward
conv3x3_backward = _impl.conv3x3_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
upsample2_forward = _impl.upsample2_forward
upsample2_backward = _impl.upsample2_backward


def get_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _fallback
    if name == "cython":
        if _compiled is None:
            from pathfl import _ckernels  # raises ImportError with the real reason

            return _ckernels
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")
