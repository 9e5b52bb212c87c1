"""Kernel backend selection.

The convolution inner loops exist twice: numba-compiled (fast, default)
and pure numpy (always available). ``FEDSUPNET_BACKEND=numpy`` or
``FEDSUPNET_BACKEND=numba`` pins the choice; unset falls back to numba
when it imports, numpy otherwise. The two backends agree to floating
point round-off but are not bitwise identical to each other; determinism
guarantees hold per backend.
"""

import os

import numpy as np

from . import _kernels_numpy

_FLAG = os.environ.get("FEDSUPNET_BACKEND", "").strip().lower()

if _FLAG == "numpy":
    _impl = _kernels_numpy
    _name = "numpy"
elif _FLAG == "numba":
    from . import _kernels_numba as _impl

    _name = "numba"
elif _FLAG == "":
    try:
        from . import _kernels_numba as _impl

        _name = "numba"
    except ImportError:
        _impl = _kernels_numpy
        _name = "numpy"
else:
    raise RuntimeError(
        f"FEDSUPNET_BACKEND={_FLAG!r} not recognized (use 'numpy' or 'numba')"
    )


def active_backend() -> str:
    return _name


def conv_fwd(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid correlation of a pre-padded input with a kernel stack."""
    if xp.ndim == 4:
        return _impl.conv2d_fwd(xp, w)
    return _impl.conv3d_fwd(xp, w)


def conv_grad_w(g: np.ndarray, xp: np.ndarray, kshape) -> np.ndarray:
    if g.ndim == 4:
        if _name == "numba":
            return _impl.conv2d_grad_w(g, xp, kshape[0], kshape[1])
        return _impl.conv2d_grad_w(g, xp, kshape)
    if _name == "numba":
        return _impl.conv3d_grad_w(g, xp, kshape[0], kshape[1], kshape[2])
    return _impl.conv3d_grad_w(g, xp, kshape)


def conv_grad_x_padded(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    if g.ndim == 4:
        return _impl.conv2d_grad_x_padded(g, w)
    return _impl.conv3d_grad_x_padded(g, w)
