"""Numba-compiled convolution kernels (default backend).

Same contract as the numpy twins in ``_kernels_numpy``: inputs are
pre-padded, input gradients are returned at the padded shape. Loops keep
the spatial axes innermost (contiguous) with the kernel tap hoisted.
Kernels are serial on purpose: every output element is accumulated in a
fixed order, so results are bitwise reproducible.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_fwd(xp, w):
    n, cin, hp, wp = xp.shape
    cout, _, kh, kw = w.shape
    oh = hp - kh + 1
    ow = wp - kw + 1
    out = np.zeros((n, cout, oh, ow), dtype=xp.dtype)
    for b in range(n):
        for o in range(cout):
            for c in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[o, c, i, j]
                        for y in range(oh):
                            for x in range(ow):
                                out[b, o, y, x] += wv * xp[b, c, y + i, x + j]
    return out


@njit(cache=True)
def conv2d_grad_w(g, xp, kh, kw):
    n, cout, oh, ow = g.shape
    cin = xp.shape[1]
    gw = np.zeros((cout, cin, kh, kw), dtype=g.dtype)
    for b in range(n):
        for o in range(cout):
            for c in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        acc = 0.0
                        for y in range(oh):
                            for x in range(ow):
                                acc += g[b, o, y, x] * xp[b, c, y + i, x + j]
                        gw[o, c, i, j] += acc
    return gw


@njit(cache=True)
def conv2d_grad_x_padded(g, w):
    n, cout, oh, ow = g.shape
    cin = w.shape[1]
    kh, kw = w.shape[2], w.shape[3]
    gxp = np.zeros((n, cin, oh + kh - 1, ow + kw - 1), dtype=g.dtype)
    for b in range(n):
        for o in range(cout):
            for c in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[o, c, i, j]
                        for y in range(oh):
                            for x in range(ow):
                                gxp[b, c, y + i, x + j] += wv * g[b, o, y, x]
    return gxp


@njit(cache=True)
def conv3d_fwd(xp, w):
    n, cin, dp, hp, wp = xp.shape
    cout, _, kd, kh, kw = w.shape
    od = dp - kd + 1
    oh = hp - kh + 1
    ow = wp - kw + 1
    out = np.zeros((n, cout, od, oh, ow), dtype=xp.dtype)
    for b in range(n):
        for o in range(cout):
            for c in range(cin):
                for u in range(kd):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[o, c, u, i, j]
                            for z in range(od):
                                for y in range(oh):
                                    for x in range(ow):
                                        out[b, o, z, y, x] += (
                                            wv * xp[b, c, z + u, y + i, x + j]
                                        )
    return out


@njit(cache=True)
def conv3d_grad_w(g, xp, kd, kh, kw):
    n, cout, od, oh, ow = g.shape
    cin = xp.shape[1]
    gw = np.zeros((cout, cin, kd, kh, kw), dtype=g.dtype)
    for b in range(n):
        for o in range(cout):
            for c in range(cin):
                for u in range(kd):
                    for i in range(kh):
                        for j in range(kw):
                            acc = 0.0
                            for z in range(od):
                                for y in range(oh):
                                    for x in range(ow):
                                        acc += (g[b, o, z, y, x]
                                                * xp[b, c, z + u, y + i, x + j])
                            gw[o, c, u, i, j] += acc
    return gw


@njit(cache=True)
def conv3d_grad_x_padded(g, w):
    n, cout, od, oh, ow = g.shape
    cin = w.shape[1]
    kd, kh, kw = w.shape[2], w.shape[3], w.shape[4]
    gxp = np.zeros(
        (n, cin, od + kd - 1, oh + kh - 1, ow + kw - 1), dtype=g.dtype
    )
    for b in range(n):
        for o in range(cout):
            for c in range(cin):
                for u in range(kd):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[o, c, u, i, j]
                            for z in range(od):
                                for y in range(oh):
                                    for x in range(ow):
                                        gxp[b, c, z + u, y + i, x + j] += (
                                            wv * g[b, o, z, y, x]
                                        )
    return gxp
