"""Independent oracles the tests check the package against.

Everything here is deliberately written the slow, obvious way (nested
loops, per-coordinate finite differences) and never calls back into the
code paths it verifies.
"""

import numpy as np


def naive_conv2d(x, w):
    """Six-nested-loop same-padding correlation, 2-d."""
    n, cin, H, W = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, cout, H, W))
    for b in range(n):
        for o in range(cout):
            for y in range(H):
                for z in range(W):
                    s = 0.0
                    for c in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                s += xp[b, c, y + i, z + j] * w[o, c, i, j]
                    out[b, o, y, z] = s
    return out


def naive_conv3d(x, w):
    n, cin, D, H, W = x.shape
    cout, _, kd, kh, kw = w.shape
    pd, ph, pw = (kd - 1) // 2, (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    out = np.zeros((n, cout, D, H, W))
    for b in range(n):
        for o in range(cout):
            for u in range(D):
                for y in range(H):
                    for z in range(W):
                        s = 0.0
                        for c in range(cin):
                            for du in range(kd):
                                for i in range(kh):
                                    for j in range(kw):
                                        s += (xp[b, c, u + du, y + i, z + j]
                                              * w[o, c, du, i, j])
                        out[b, o, u, y, z] = s
    return out


def finite_difference_grad(f, x, h=1e-4):
    """Central differences of a scalar function, every coordinate."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
        it.iternext()
    return g


def max_relative_error(analytic, fd, floor=1e-4):
    """Elementwise |a-f| / max(|a|, |f|, floor), maximized.

    The floor turns the comparison into an absolute one for coordinates
    whose gradient is tiny, where the O(h^2) truncation noise of central
    differences would otherwise dominate a pure ratio.
    """
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return float((np.abs(a - f) / denom).max())


def naive_cross_entropy(logits, target):
    """Direct per-voxel -log softmax summation."""
    n, c = logits.shape[0], logits.shape[1]
    total = 0.0
    count = 0
    flat = logits.reshape(n, c, -1)
    tflat = target.reshape(n, -1)
    for b in range(n):
        for v in range(flat.shape[2]):
            row = flat[b, :, v]
            z = np.exp(row - row.max()).sum()
            total += -(row[tflat[b, v]] - row.max() - np.log(z))
            count += 1
    return total / count


# 10 steps of scalar Adam from p=1.0 with constant gradient 0.3,
# lr=0.1, betas=(0.9, 0.999), eps=1e-8; values produced by the loop in
# scalar_adam_sequence below and frozen here.
ADAM_SCALAR_SEQUENCE = [
    0.9000000033333332,
    0.8000000066666672,
    0.7000000100000004,
    0.6000000133333342,
    0.5000000166666676,
    0.40000002000000084,
    0.3000000233333344,
    0.2000000266666674,
    0.10000003000000046,
    3.3333333843144075e-08,
]


def scalar_adam_sequence(p0=1.0, g=0.3, lr=0.1, b1=0.9, b2=0.999, eps=1e-8,
                         steps=10):
    import math

    p, m, v = p0, 0.0, 0.0
    seq = []
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        seq.append(p)
    return seq
