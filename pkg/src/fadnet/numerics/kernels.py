"""Convolution data-movement kernels with backend selection at import.

The compiled Cython module is used when it imports cleanly; setting
``FADNET_PURE_PYTHON=1`` forces the numpy fallback. Both backends expose the
same four functions and produce bit-identical results.
"""
import os

import numpy as np

from . import _pykernels

_compiled = None
if os.environ.get("FADNET_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = name or BACKEND
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


_active = get_backend()


def set_backend(name):
    """Switch the active backend for subsequent calls (benchmarks, tests)."""
    global _active, BACKEND
    _active = get_backend(name)
    BACKEND = name


def _prep(x):
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return np.ascontiguousarray(x)


def im2col1d(x, k, stride=1, pad=0):
    return _active.im2col1d(_prep(x), int(k), int(stride), int(pad))


def col2im1d(cols, C, L, k, stride=1, pad=0):
    return _active.col2im1d(_prep(cols), int(C), int(L), int(k), int(stride), int(pad))


def im2col2d(x, kh, kw, stride=1, pad=0):
    return _active.im2col2d(_prep(x), int(kh), int(kw), int(stride), int(pad))


def col2im2d(cols, C, H, W, kh, kw, stride=1, pad=0):
    return _active.col2im2d(
        _prep(cols), int(C), int(H), int(W), int(kh), int(kw), int(stride), int(pad)
    )
