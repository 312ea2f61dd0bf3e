"""Backend-dispatched hot kernels.

Every function forwards to the numba or numpy implementation depending on
the active backend (see fmattack.backend). Both implementations share
exact signatures and semantics; only floating summation order differs, so
results may disagree by rounding between backends but are deterministic
within one backend.
"""

from .. import backend as _backend
from . import numpy_kernels as _np_impl

_numba_impl = None


def _impl():
    global _numba_impl
    if _backend.get_backend() == "numba":
        if _numba_impl is None:
            from . import numba_kernels

            _numba_impl = numba_kernels
        return _numba_impl
    return _np_impl


def conv2d_forward(xp, k, stride):
    return _impl().conv2d_forward(xp, k, stride)


def conv2d_backward(xp, k, gy, stride):
    return _impl().conv2d_backward(xp, k, gy, stride)


def maxpool_forward(x, window, stride):
    return _impl().maxpool_forward(x, window, stride)


def maxpool_backward(gy, idx, h, w):
    return _impl().maxpool_backward(gy, idx, h, w)
