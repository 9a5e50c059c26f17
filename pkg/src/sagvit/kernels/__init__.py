"""Conv2d kernel backend selection.

The compiled Cython extension is used when importable; otherwise (or when
``SAGVIT_PURE_PYTHON=1`` is set) the numpy im2col fallback takes over.  Both
backends compute identical values; ``BACKEND`` names the one in use.
"""

import os

from . import _conv_numpy

BACKEND = "numpy"
conv2d_forward = _conv_numpy.conv2d_forward
conv2d_backward = _conv_numpy.conv2d_backward

if os.environ.get("SAGVIT_PURE_PYTHON", "") != "1":
    try:
        from . import _conv_ext

        BACKEND = "cython"
        conv2d_forward = _conv_ext.conv2d_forward
        conv2d_backward = _conv_ext.conv2d_backward
    except ImportError:
        pass

__all__ = ["BACKEND", "conv2d_forward", "conv2d_backward", "_conv_numpy"]
