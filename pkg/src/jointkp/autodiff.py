"""Dense-tensor reverse-mode autodiff on numpy arrays.

Ops execute eagerly; when a Graph is recording and an input requires
grad, the output is appended to the tape together with a backward
closure. The tape order is the execution order, so walking it in
reverse is a valid reverse topological order. Training runs in float32;
float64 is used only as a shadow precision inside gradient checks.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "NonFiniteError",
    "NonDeterministicError",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "relu",
    "log",
    "tsum",
    "mean",
    "transpose",
    "reshape",
    "row_softmax",
    "layer_norm",
    "gather_rows",
    "select_cols",
    "pick",
    "bin_sum",
    "dropout",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class NonDeterministicError(RuntimeError):
    pass


_FLOAT_KINDS = (np.float32, np.float64)


class Tensor:
    """A numpy array plus grad bookkeeping. float32 unless told otherwise."""

    __slots__ = ("data", "grad", "requires_grad", "_bwd")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_KINDS:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; scalars stay python-weak so float32 is preserved
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Tape of ops for one forward pass. Single-owner, not reentrant."""

    _active = None

    def __init__(self):
        self._tape = []

    def __enter__(self):
        if Graph._active is not None:
            raise RuntimeError("a Graph is already recording")
        Graph._active = self
        return self

    def __exit__(self, *exc):
        Graph._active = None
        return False

    def __len__(self):
        return len(self._tape)


def as_tensor(x, dtype=np.float32):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _record(out, parents, bwd):
    g = Graph._active
    if g is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._bwd = bwd
        g._tape.append(out)
    return out


def _accum(t, g, own=False):
    """Add g into t.grad. own=True transfers a freshly allocated array
    (no other references) without the defensive copy."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if own else (g.copy() if isinstance(g, np.ndarray) else np.asarray(g))
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum g down to `shape` (reverses numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    out = Tensor(a.data + b.data)

    def bwd(g):
        ga = _unbroadcast(g, a.data.shape)
        _accum(a, ga, own=ga is not g)
        gb = _unbroadcast(g, b.data.shape)
        _accum(b, gb, own=gb is not g)

    return _record(out, (a, b), bwd)


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    out = Tensor(a.data - b.data)

    def bwd(g):
        ga = _unbroadcast(g, a.data.shape)
        _accum(a, ga, own=ga is not g)
        _accum(b, _unbroadcast(-g, b.data.shape), own=True)

    return _record(out, (a, b), bwd)


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    out = Tensor(a.data * b.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape), own=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape), own=True)

    return _record(out, (a, b), bwd)


def neg(a):
    a = as_tensor(a)
    out = Tensor(-a.data)

    def bwd(g):
        _accum(a, -g, own=True)

    return _record(out, (a,), bwd)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} x {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape), own=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape), own=True)

    return _record(out, (a, b), bwd)


def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0))

    def bwd(g):
        _accum(a, g * (a.data > 0), own=True)

    return _record(out, (a,), bwd)


def log(a):
    a = as_tensor(a)
    if a.data.size and a.data.min() <= 0:
        raise NonFiniteError("log of non-positive value")
    out = Tensor(np.log(a.data))

    def bwd(g):
        _accum(a, g / a.data, own=True)

    return _record(out, (a,), bwd)


def tsum(a, axis=None):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis))

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return _record(out, (a,), bwd)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def transpose(a, axes):
    a = as_tensor(a)
    out = Tensor(np.transpose(a.data, axes))
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, np.transpose(g, inv))

    return _record(out, (a,), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _record(out, (a,), bwd)


def row_softmax(x, bias=None):
    """Stable softmax over the last axis; rows sum to 1.

    `bias` is an optional constant additive term (attention permission
    bias) folded in before normalization; it carries no gradient.
    """
    x = as_tensor(x)
    if x.data.size and not np.isfinite(x.data).all():
        raise NonFiniteError("row_softmax input contains NaN/Inf")
    logits = x.data if bias is None else x.data + bias
    if logits.size:
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        s = e / e.sum(axis=-1, keepdims=True)
    else:
        s = logits
    out = Tensor(s)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        _accum(x, s * (g - dot), own=True)

    return _record(out, (x,), bwd)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to mean 0 / var 1, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm needs a last axis of at least 2")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(gain.data * xhat + bias.data)

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            _accum(gain, (g * xhat).sum(axis=lead), own=True)
        if bias.requires_grad:
            _accum(bias, g.sum(axis=lead), own=True)
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            _accum(x, gx, own=True)

    return _record(out, (x, gain, bias), bwd)


def gather_rows(table, idx):
    """table[idx] along axis 0; idx may be any integer array."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    out = Tensor(table.data[idx])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        _accum(table, gt, own=True)

    return _record(out, (table,), bwd)


def select_cols(x, cols):
    """x[..., cols]; cols must be unique."""
    x = as_tensor(x)
    cols = np.asarray(cols)
    out = Tensor(x.data[..., cols])

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[..., cols] = g
        _accum(x, gx, own=True)

    return _record(out, (x,), bwd)


def pick(x, rows, cols):
    """1-D gather x[rows, cols] from a matrix."""
    x = as_tensor(x)
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    out = Tensor(x.data[rows, cols])

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols), g)
        _accum(x, gx, own=True)

    return _record(out, (x,), bwd)


def bin_sum(values, bins, size):
    """Scatter-add a 1-D value vector into `size` bins."""
    values = as_tensor(values)
    bins = np.asarray(bins)
    out = Tensor(np.bincount(bins, weights=values.data, minlength=size).astype(values.dtype))

    def bwd(g):
        _accum(values, g[bins], own=True)

    return _record(out, (values,), bwd)


def dropout(x, p, rng):
    """Inverted dropout; identity when p == 0."""
    x = as_tensor(x)
    if p == 0.0:
        return x
    keep = (rng.random(x.data.shape, dtype=np.float32) >= p).astype(x.dtype)
    keep *= 1.0 / (1.0 - p)
    out = Tensor(x.data * keep)

    def bwd(g):
        _accum(x, g * keep, own=True)

    return _record(out, (x,), bwd)


def backward(loss, graph, store=None):
    """Reverse pass over the tape; fills zero grads for untouched params."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not len(graph):
        raise RuntimeError("backward on an empty graph")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph._tape):
        if node.grad is None or node._bwd is None:
            continue
        node._bwd(node.grad)
    if store is not None:
        for p in store.trainable():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def grad_check(build_loss, store, h=1e-3, coords_per_param=4, rng=None):
    """Max relative error between analytic grads and central differences.

    `build_loss(store)` must deterministically build a scalar loss from
    the store's parameters. Coordinates are sampled per parameter.
    """
    if not (1e-4 <= h <= 1e-2):
        raise ValueError(f"step h={h} outside [1e-4, 1e-2]")
    rng = rng or np.random.default_rng(0)

    def value():
        return float(build_loss(store).data)

    v1, v2 = value(), value()
    if v1 != v2:
        raise NonDeterministicError(f"forward values differ across calls: {v1} vs {v2}")

    store.zero_grad()
    with Graph() as g:
        loss = build_loss(store)
    backward(loss, g, store)
    analytic = {name: p.grad.copy() for name, p in store.items() if p.requires_grad}
    store.zero_grad()

    worst = 0.0
    for name, p in store.items():
        if not p.requires_grad:
            continue
        n = min(p.data.size, coords_per_param)
        coords = rng.choice(p.data.size, size=n, replace=False)
        for c in coords:
            orig = p.data.flat[c]
            p.data.flat[c] = orig + h
            f_plus = value()
            p.data.flat[c] = orig - h
            f_minus = value()
            p.data.flat[c] = orig
            cd = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[name].flat[c])
            rel = abs(a - cd) / (abs(a) + abs(cd) + 1e-8)
            worst = max(worst, rel)
    return worst
