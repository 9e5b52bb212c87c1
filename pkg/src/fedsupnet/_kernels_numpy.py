"""Pure-numpy convolution kernels (fallback backend).

All functions operate on pre-padded inputs: the caller applies the
same-padding before the forward pass and crops the padded input-gradient
afterwards. Gradient w.r.t. the input is computed as a full correlation of
the output gradient with the flipped kernel.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_fwd(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    win = sliding_window_view(xp, w.shape[2:], axis=(2, 3))
    return np.einsum("nchwij,ocij->nohw", win, w, optimize=True)


def conv2d_grad_w(g: np.ndarray, xp: np.ndarray, kshape) -> np.ndarray:
    win = sliding_window_view(xp, kshape, axis=(2, 3))
    return np.einsum("nohw,nchwij->ocij", g, win, optimize=True)


def conv2d_grad_x_padded(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    kh, kw = w.shape[2], w.shape[3]
    gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    wf = w[:, :, ::-1, ::-1]
    win = sliding_window_view(gp, (kh, kw), axis=(2, 3))
    return np.einsum("nohwij,ocij->nchw", win, wf, optimize=True)


def conv3d_fwd(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    win = sliding_window_view(xp, w.shape[2:], axis=(2, 3, 4))
    return np.einsum("ncdhwijk,ocijk->nodhw", win, w, optimize=True)


def conv3d_grad_w(g: np.ndarray, xp: np.ndarray, kshape) -> np.ndarray:
    win = sliding_window_view(xp, kshape, axis=(2, 3, 4))
    return np.einsum("nodhw,ncdhwijk->ocijk", g, win, optimize=True)


def conv3d_grad_x_padded(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    kd, kh, kw = w.shape[2], w.shape[3], w.shape[4]
    gp = np.pad(
        g,
        ((0, 0), (0, 0), (kd - 1, kd - 1), (kh - 1, kh - 1), (kw - 1, kw - 1)),
    )
    wf = w[:, :, ::-1, ::-1, ::-1]
    win = sliding_window_view(gp, (kd, kh, kw), axis=(2, 3, 4))
    return np.einsum("nodhwijk,ocijk->ncdhw", win, wf, optimize=True)
