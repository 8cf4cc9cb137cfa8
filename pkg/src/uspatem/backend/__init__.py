"""Kernel backend selection.

The compiled Cython kernels are preferred when the extension built; the
numpy lane is the fallback. Override with USPATEM_KERNELS=compiled|numpy
(``compiled`` raises if the extension is unavailable).
"""

import os

from . import numpy_kernels

_choice = os.environ.get("USPATEM_KERNELS", "auto")
if _choice not in ("auto", "compiled", "numpy"):
    raise ValueError(f"USPATEM_KERNELS must be auto|compiled|numpy, got {_choice!r}")

_impl = None
if _choice in ("auto", "compiled"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _choice == "compiled":
            raise
if _impl is None:
    _impl = numpy_kernels

BACKEND = "compiled" if _impl is not numpy_kernels else "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
