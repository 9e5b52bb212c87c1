"""Timing comparison of the numba and numpy convolution kernels.

Runs forward and both backward passes on training-shaped tensors and
prints per-call times plus the speedup. Invoke directly:

    python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from fedsupnet import _kernels_numpy as knp

try:
    from fedsupnet import _kernels_numba as knb
except ImportError:
    knb = None

CASES_2D = [
    ("conv2d 18x1x16x16 k3 w8", (18, 1, 18, 18), (8, 1, 3, 3)),
    ("conv2d 18x8x16x16 k3 w8", (18, 8, 18, 18), (8, 8, 3, 3)),
    ("conv2d 18x8x8x8 k5 w16", (18, 8, 12, 12), (16, 8, 5, 5)),
    ("conv2d 1x8x32x32 k3 w8", (1, 8, 34, 34), (8, 8, 3, 3)),
]
CASES_3D = [
    ("conv3d 2x4x16x16x8 k3 w8", (2, 4, 18, 18, 10), (8, 4, 3, 3, 3)),
]


def _time(fn, repeats):
    fn()  # warm-up (and JIT compile for numba)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_case(label, xshape, wshape, repeats):
    rng = np.random.default_rng(0)
    xp = rng.normal(size=xshape)
    w = rng.normal(size=wshape)
    g = rng.normal(size=(xshape[0], wshape[0])
                   + tuple(s - k + 1 for s, k in zip(xshape[2:], wshape[2:])))
    is3d = len(xshape) == 5
    rows = []
    for name, mod in (("numpy", knp),) + ((("numba", knb),) if knb else ()):
        if is3d:
            fwd = lambda m=mod: m.conv3d_fwd(xp, w)
            if name == "numba":
                gw = lambda m=mod: m.conv3d_grad_w(g, xp, *wshape[2:])
            else:
                gw = lambda m=mod: m.conv3d_grad_w(g, xp, wshape[2:])
            gx = lambda m=mod: m.conv3d_grad_x_padded(g, w)
        else:
            fwd = lambda m=mod: m.conv2d_fwd(xp, w)
            if name == "numba":
                gw = lambda m=mod: m.conv2d_grad_w(g, xp, *wshape[2:])
            else:
                gw = lambda m=mod: m.conv2d_grad_w(g, xp, wshape[2:])
            gx = lambda m=mod: m.conv2d_grad_x_padded(g, w)
        rows.append((name, _time(fwd, repeats), _time(gw, repeats),
                     _time(gx, repeats)))
    print(f"\n{label}")
    for name, tf, tw, tx in rows:
        total = tf + tw + tx
        print(f"  {name:>6}: fwd {tf * 1e3:7.2f} ms   grad_w {tw * 1e3:7.2f} ms"
              f"   grad_x {tx * 1e3:7.2f} ms   total {total * 1e3:7.2f} ms")
    if len(rows) == 2:
        speedup = sum(rows[0][1:]) / sum(rows[1][1:])
        print(f"  numba speedup: {speedup:.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--skip-3d", action="store_true")
    args = parser.parse_args()
    if knb is None:
        print("numba not importable; timing numpy kernels only")
    for label, xs, ws in CASES_2D + ([] if args.skip_3d else CASES_3D):
        bench_case(label, xs, ws, args.repeats)


if __name__ == "__main__":
    main()
