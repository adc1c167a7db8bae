"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad`` records a node
carrying its parents and a closure mapping the output adjoint to parent
adjoints. Nodes are stamped with a global creation counter; ``backward``
replays the nodes reachable from the loss in exact reverse creation order.
"""
from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager

import numpy as np

from . import kernels

_counter = itertools.count()
_mode = threading.local()


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


def grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._seq = next(_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _record(ad * bd, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return _record(out, (a, b), backward)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,))


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive value")
    d = x.data
    return _record(np.log(d), (x,), lambda g: (g / d,))


def clamp_min(x, lo):
    """max(x, lo); entries at or below ``lo`` pass no gradient."""
    x = as_tensor(x)
    mask = x.data > lo
    return _record(np.where(mask, x.data, lo), (x,), lambda g: (g * mask,))


def elementwise(op, *args):
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ValueError(f"unknown elementwise op {op!r}")
    return fn(*args)


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div,
    "tanh": tanh, "sigmoid": sigmoid, "relu": relu, "exp": exp, "log": log,
}


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    ad, bd = a.data, b.data

    def backward(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _record(ad @ bd, (a, b), backward)


def transpose(x):
    x = as_tensor(x)
    return _record(x.data.T, (x,), lambda g: (g.T,))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def reduce_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def reduce_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    n = x.size if axis is None else x.shape[axis]
    if n == 0:
        raise DimensionError("mean over an empty axis")
    return reduce_sum(x, axis, keepdims) * (1.0 / n)


def reduce_max(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    if (x.size if axis is None else x.shape[axis]) == 0:
        raise DimensionError("max over an empty axis")
    shape = x.shape
    if axis is None:
        flat = int(np.argmax(x.data))  # first index on ties

        def backward(g):
            out = np.zeros(x.size)
            out[flat] = np.asarray(g).reshape(-1)[0]
            return (out.reshape(shape),)

        val = x.data.reshape(-1)[flat]
        return _record(np.full((1,) * x.ndim, val) if keepdims else np.asarray(val), (x,), backward)

    arg = np.argmax(x.data, axis=axis)
    val = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        out = np.zeros(shape)
        np.put_along_axis(out, np.expand_dims(arg, axis), g, axis)
        return (out,)

    return _record(val if keepdims else np.squeeze(val, axis), (x,), backward)


def reduce(op, x, axis=None, keepdims=False):
    fn = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}.get(op)
    if fn is None:
        raise ValueError(f"unknown reduction {op!r}")
    return fn(x, axis, keepdims)


def softmax(x, axis=-1):
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), backward)


# ---------------------------------------------------------------- structure

def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of nothing")
    ndim = tensors[0].ndim
    axis = _norm_axis(axis, ndim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(x, idx):
    x = as_tensor(x)
    shape = x.shape
    basic = _is_basic(idx)

    def backward(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _record(x.data[idx], (x,), backward)


def _check_rows(idx, n):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row index out of range for {n} rows")
    return idx


def index_select(x, indices):
    """Gather rows ``x[indices]``."""
    x = as_tensor(x)
    idx = _check_rows(indices, x.shape[0])
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        kernels.scatter_add_rows(out, idx, g)
        return (out,)

    return _record(x.data[idx], (x,), backward)


def scatter_add(x, indices, rows):
    """Return a copy of ``x`` with ``rows[i]`` added into row ``indices[i]``."""
    x, rows = as_tensor(x), as_tensor(rows)
    idx = _check_rows(indices, x.shape[0])
    if rows.shape[0] != idx.shape[0] or rows.shape[1:] != x.shape[1:]:
        raise DimensionError(f"scatter_add: rows {rows.shape} vs target {x.shape} with {idx.shape[0]} indices")
    out = np.array(x.data, copy=True)
    kernels.scatter_add_rows(out, idx, rows.data)
    return _record(out, (x, rows), lambda g: (g, g[idx]))


def segment_sum(x, segments, n_segments):
    x = as_tensor(x)
    return scatter_add(Tensor(np.zeros((n_segments,) + x.shape[1:])), segments, x)


def segment_max(x, segments, n_segments):
    """Column-wise max per segment; gradient routes to the first argmax row."""
    x = as_tensor(x)
    seg = _check_rows(segments, n_segments)
    vals, arg = kernels.segment_max(np.ascontiguousarray(x.data), seg, n_segments)
    shape = x.shape
    cols = np.arange(shape[1])

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, (arg, cols), g)
        return (out,)

    return _record(vals, (x,), backward)


def dropout(x, p, training, rng):
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _record(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- backward

def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is not None:
            nodes.append(t)
            stack.extend(p for p in t._parents if p.requires_grad)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    pending = {id(loss): np.ones_like(loss.data)}
    for node in nodes:
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def ceil_ratio(ratio: float, n: int) -> int:
    """ceil(ratio * n) robust to float noise such as 0.7 * 10."""
    return max(1, math.ceil(round(ratio * n, 9)))
