"""Dense n-dimensional arrays with reverse-mode automatic differentiation.

The graph is recorded implicitly: every field produced by an operation
keeps references to its inputs and a closure implementing the backward
rule. ``backward()`` on a scalar loss linearizes the graph topologically
and replays the rules in reverse order, visiting each node exactly once.

Image-shaped fields follow the layout (batch, channels, d1..dD) with
D in {2, 3}; small vector fields (e.g. per-slot path logits) are plain
1-d arrays. Operations never broadcast except where an explicit scalar
variant exists.
"""

from __future__ import annotations

import numpy as np

from . import backend

DEFAULT_DTYPE = np.float64


class SpatialField:
    """A value node: dense array, optional gradient, optional tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward_rule=None,
                 name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward_rule
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"SpatialField(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element field, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "SpatialField":
        return SpatialField(self.data.copy())

    def backward(self):
        """Populate gradients of every requires_grad ancestor of this scalar.

        Repeated calls accumulate into leaf gradients; intermediate node
        gradients are reset at the start of each replay.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() expects a scalar loss, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        for node in topo:
            if not node.is_leaf:
                node.grad = None
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar for the elementwise ops below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul_const(self, -1.0)


def _toposort(root: SpatialField):
    """Parents-first ordering of the recorded graph under ``root``."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(node: SpatialField, g: np.ndarray):
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += g


def _result(data, parents, rule) -> SpatialField:
    tracked = [p for p in parents if p.requires_grad]
    if tracked:
        return SpatialField(data, requires_grad=True, parents=tracked,
                            backward_rule=rule)
    return SpatialField(data)


def as_field(x) -> SpatialField:
    return x if isinstance(x, SpatialField) else SpatialField(x)


def parameter(data, name=None) -> SpatialField:
    return SpatialField(np.asarray(data, dtype=DEFAULT_DTYPE),
                        requires_grad=True, name=name)


def _check_same_shape(a: SpatialField, b: SpatialField, op: str):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: operand shapes differ, {a.data.shape} vs {b.data.shape}")


# ----------------------------------------------------------------------
# elementwise and reduction primitives
# ----------------------------------------------------------------------

def add(a: SpatialField, b: SpatialField) -> SpatialField:
    a, b = as_field(a), as_field(b)
    _check_same_shape(a, b, "add")

    def rule(g):
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, g)

    return _result(a.data + b.data, (a, b), rule)


def sub(a: SpatialField, b: SpatialField) -> SpatialField:
    a, b = as_field(a), as_field(b)
    _check_same_shape(a, b, "sub")

    def rule(g):
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), rule)


def mul(a: SpatialField, b: SpatialField) -> SpatialField:
    a, b = as_field(a), as_field(b)
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def rule(g):
        if a.requires_grad:
            _accumulate(a, g * bd)
        if b.requires_grad:
            _accumulate(b, g * ad)

    return _result(ad * bd, (a, b), rule)


def div(a: SpatialField, b: SpatialField) -> SpatialField:
    a, b = as_field(a), as_field(b)
    _check_same_shape(a, b, "div")
    ad, bd = a.data, b.data

    def rule(g):
        if a.requires_grad:
            _accumulate(a, g / bd)
        if b.requires_grad:
            _accumulate(b, -g * ad / (bd * bd))

    return _result(ad / bd, (a, b), rule)


def add_const(a: SpatialField, c: float) -> SpatialField:
    def rule(g):
        _accumulate(a, g)

    return _result(a.data + c, (a,), rule)


def mul_const(a: SpatialField, c: float) -> SpatialField:
    def rule(g):
        _accumulate(a, g * c)

    return _result(a.data * c, (a,), rule)


def mul_scalar(x: SpatialField, s: SpatialField) -> SpatialField:
    """x scaled by a single-element field; gradients flow to both."""
    if s.data.size != 1:
        raise ValueError(f"mul_scalar: scale must have one element, got shape {s.data.shape}")
    sval = s.data.reshape(-1)[0]
    xd = x.data

    def rule(g):
        if x.requires_grad:
            _accumulate(x, g * sval)
        if s.requires_grad:
            _accumulate(s, np.array([(g * xd).sum()], dtype=s.data.dtype).reshape(s.data.shape))

    return _result(xd * sval, (x, s), rule)


def index_element(x: SpatialField, i: int) -> SpatialField:
    """Element i of a 1-d field as a single-element field."""
    if x.data.ndim != 1:
        raise ValueError(f"index_element expects a 1-d field, got shape {x.data.shape}")

    def rule(g):
        buf = np.zeros_like(x.data)
        buf[i] = g.reshape(-1)[0]
        _accumulate(x, buf)

    return _result(x.data[i:i + 1].copy(), (x,), rule)


def relu(x: SpatialField) -> SpatialField:
    mask = x.data > 0

    def rule(g):
        _accumulate(x, g * mask)

    return _result(np.maximum(x.data, 0), (x,), rule)


def sigmoid(x: SpatialField) -> SpatialField:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def rule(g):
        _accumulate(x, g * s * (1.0 - s))

    return _result(s, (x,), rule)


def exp(x: SpatialField) -> SpatialField:
    e = np.exp(x.data)

    def rule(g):
        _accumulate(x, g * e)

    return _result(e, (x,), rule)


def log(x: SpatialField) -> SpatialField:
    xd = x.data

    def rule(g):
        _accumulate(x, g / xd)

    return _result(np.log(xd), (x,), rule)


def sum_all(x: SpatialField) -> SpatialField:
    def rule(g):
        _accumulate(x, np.full_like(x.data, g.reshape(-1)[0]))

    return _result(np.array([x.data.sum()], dtype=x.data.dtype), (x,), rule)


def mean_all(x: SpatialField) -> SpatialField:
    n = x.data.size

    def rule(g):
        _accumulate(x, np.full_like(x.data, g.reshape(-1)[0] / n))

    return _result(np.array([x.data.mean()], dtype=x.data.dtype), (x,), rule)


# ----------------------------------------------------------------------
# image ops: convolution, resampling, channel surgery
# ----------------------------------------------------------------------

def _spatial_rank(x: SpatialField) -> int:
    d = x.data.ndim - 2
    if d not in (2, 3):
        raise ValueError(
            f"expected (batch, channels, spatial...) with 2 or 3 spatial axes, got shape {x.data.shape}"
        )
    return d


def conv(x: SpatialField, kernel: SpatialField, axes_mask=None) -> SpatialField:
    """Stride-1 correlation with zero-fill same-padding.

    ``axes_mask`` lists the active spatial axes (0-based); the kernel must
    be odd-sized along each active axis and size 1 along every inactive
    axis, which is how full-rank, planar, and single-axis convolutions are
    expressed uniformly.
    """
    d = _spatial_rank(x)
    k = kernel.data
    if k.ndim != d + 2:
        raise ValueError(
            f"conv: kernel rank {k.ndim} does not match input rank {x.data.ndim}"
        )
    if k.shape[1] != x.data.shape[1]:
        raise ValueError(
            f"conv: kernel expects {k.shape[1]} input channels, input has {x.data.shape[1]}"
        )
    if axes_mask is None:
        axes_mask = tuple(range(d))
    axes_mask = tuple(sorted(set(int(a) for a in axes_mask)))
    for a in axes_mask:
        if a < 0 or a >= d:
            raise ValueError(f"conv: axes_mask entry {a} out of range for {d} spatial axes")
    for a in range(d):
        ext = k.shape[2 + a]
        if a in axes_mask:
            if ext % 2 == 0:
                raise ValueError(
                    f"conv: kernel extent {ext} on spatial axis {a} must be odd"
                )
        elif ext != 1:
            raise ValueError(
                f"conv: spatial axis {a} is masked out but kernel extent is {ext} (must be 1)"
            )

    pads = [(k.shape[2 + a] - 1) // 2 for a in range(d)]
    pad_spec = [(0, 0), (0, 0)] + [(p, p) for p in pads]
    xp = np.pad(x.data, pad_spec)
    out = backend.conv_fwd(xp, k)
    kshape = k.shape[2:]

    def rule(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            gxp = backend.conv_grad_x_padded(g, k)
            crop = (slice(None), slice(None)) + tuple(
                slice(p, p + s) for p, s in zip(pads, x.data.shape[2:])
            )
            _accumulate(x, gxp[crop])
        if kernel.requires_grad:
            _accumulate(kernel, backend.conv_grad_w(g, xp, kshape))

    return _result(out, (x, kernel), rule)


def downsample(x: SpatialField) -> SpatialField:
    """Halve each spatial dim with a 2^D max window."""
    d = _spatial_rank(x)
    for a in range(d):
        if x.data.shape[2 + a] % 2 != 0:
            raise ValueError(
                f"downsample: spatial axis {a} has odd extent {x.data.shape[2 + a]}"
            )
    n, c = x.data.shape[:2]
    sp = x.data.shape[2:]
    out_sp = tuple(s // 2 for s in sp)
    # expose the 2^D window as a trailing axis, track argmax for backward
    view = x.data.reshape((n, c) + sum(((s // 2, 2) for s in sp), ()))
    # bring the window axes (3, 5, ...) to the back
    perm = [0, 1] + [2 + 2 * i for i in range(d)] + [3 + 2 * i for i in range(d)]
    win = view.transpose(perm).reshape((n, c) + out_sp + (2 ** d,))
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def rule(g):
        buf = np.zeros((n, c) + out_sp + (2 ** d,), dtype=g.dtype)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        inv = buf.reshape((n, c) + out_sp + (2,) * d)
        inv_perm = np.argsort(perm)
        gx = inv.transpose(inv_perm).reshape(x.data.shape)
        _accumulate(x, gx)

    return _result(np.ascontiguousarray(out), (x,), rule)


def upsample(x: SpatialField) -> SpatialField:
    """Double each spatial dim by nearest-neighbor replication."""
    d = _spatial_rank(x)
    out = x.data
    for a in range(d):
        out = np.repeat(out, 2, axis=2 + a)

    def rule(g):
        n, c = x.data.shape[:2]
        sp = x.data.shape[2:]
        view = g.reshape((n, c) + sum(((s, 2) for s in sp), ()))
        gx = view.sum(axis=tuple(3 + 2 * i for i in range(d)))
        _accumulate(x, gx)

    return _result(out, (x,), rule)


def concat_channels(a: SpatialField, b: SpatialField) -> SpatialField:
    da, db = _spatial_rank(a), _spatial_rank(b)
    if da != db:
        raise ValueError(f"concat_channels: spatial ranks differ, {da} vs {db}")
    if a.data.shape[0] != b.data.shape[0]:
        raise ValueError(
            f"concat_channels: batch sizes differ, {a.data.shape[0]} vs {b.data.shape[0]}"
        )
    for ax in range(da):
        if a.data.shape[2 + ax] != b.data.shape[2 + ax]:
            raise ValueError(
                f"concat_channels: spatial axis {ax} differs, "
                f"{a.data.shape[2 + ax]} vs {b.data.shape[2 + ax]}"
            )
    ca = a.data.shape[1]

    def rule(g):
        if a.requires_grad:
            _accumulate(a, g[:, :ca])
        if b.requires_grad:
            _accumulate(b, g[:, ca:])

    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), rule)


def slice_channels(x: SpatialField, start: int, stop: int) -> SpatialField:
    c = x.data.shape[1]
    if not (0 <= start < stop <= c):
        raise ValueError(f"slice_channels: [{start}:{stop}] invalid for {c} channels")

    def rule(g):
        buf = np.zeros_like(x.data)
        buf[:, start:stop] = g
        _accumulate(x, buf)

    return _result(x.data[:, start:stop].copy(), (x,), rule)


def cross_entropy_map(logits: SpatialField, target: np.ndarray) -> SpatialField:
    """Mean per-voxel negative log-softmax of the target class.

    Fused forward/backward: the gradient is (softmax - onehot) / count.
    ``target`` is an integer class map shaped (batch, spatial...).
    """
    ld = logits.data
    nclass = ld.shape[1]
    if nclass < 2:
        raise ValueError(f"cross_entropy: need at least 2 class channels, got {nclass}")
    tgt = np.asarray(target)
    if tgt.shape != ld.shape[:1] + ld.shape[2:]:
        raise ValueError(
            f"cross_entropy: target shape {tgt.shape} does not match logits {ld.shape}"
        )
    tgt = tgt.astype(np.int64)
    if tgt.min() < 0 or tgt.max() >= nclass:
        raise ValueError(
            f"cross_entropy: target class {int(tgt.max() if tgt.max() >= nclass else tgt.min())} "
            f"out of range for {nclass} classes"
        )
    m = ld.max(axis=1, keepdims=True)
    e = np.exp(ld - m)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    onehot_idx = np.expand_dims(tgt, 1)
    logp_target = np.take_along_axis(ld - m - np.log(z), onehot_idx, axis=1)
    count = logp_target.size
    val = np.array([-logp_target.sum() / count], dtype=ld.dtype)

    def rule(g):
        gv = g.reshape(-1)[0]
        gl = probs.copy()
        np.put_along_axis(
            gl, onehot_idx,
            np.take_along_axis(gl, onehot_idx, axis=1) - 1.0, axis=1,
        )
        _accumulate(logits, gl * (gv / count))

    return _result(val, (logits,), rule)
