"""Dense float64 tensors with a recorded reverse-mode tape."""

from __future__ import annotations

import numpy as np

from fixsearch.errors import UsageError

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic dispatch; implementations live in functional
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data, parents, backward_fn):
    """Create an op output; the tape is recorded only if some parent needs grads."""
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)


def _topological(root):
    order, seen = [], set()
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


def backward(loss):
    """Populate ``.grad`` of every tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; interior gradients are overwritten.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor with requires_grad=True")
    order = _topological(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)


def add(a, b):
    ad, bd = _data(a), _data(b)
    out = ad + bd

    def bw(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)

    return make_result(out, _pair(a, b), _align(a, b, bw))


def sub(a, b):
    ad, bd = _data(a), _data(b)
    out = ad - bd

    def bw(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)

    return make_result(out, _pair(a, b), _align(a, b, bw))


def mul(a, b):
    ad, bd = _data(a), _data(b)
    out = ad * bd

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_result(out, _pair(a, b), _align(a, b, bw))


def div(a, b):
    ad, bd = _data(a), _data(b)
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return make_result(out, _pair(a, b), _align(a, b, bw))


def _pair(a, b):
    return tuple(x for x in (a, b) if isinstance(x, Tensor))


def _align(a, b, bw):
    # drop gradients for operands that are plain arrays / scalars
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if ta and tb:
        return bw
    if ta:
        return lambda g: (bw(g)[0],)
    return lambda g: (bw(g)[1],)


def tsum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(out, (x,), bw)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    old = x.shape
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(old),))


def broadcast_to(x, shape):
    old = x.shape
    out = np.broadcast_to(x.data, shape).copy()
    return make_result(out, (x,), lambda g: (_unbroadcast(g, old),))


def relu(x):
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def log(x):
    d = x.data
    return make_result(np.log(d), (x,), lambda g: (g / d,))


def amax(x):
    """Global maximum; the gradient goes to the first maximal element in scan order."""
    idx = int(np.argmax(x.data))
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        out.reshape(-1)[idx] = g.reshape(-1)[0]
        return (out,)

    return make_result(np.asarray(x.data.reshape(-1)[idx]), (x,), bw)


def amin(x):
    idx = int(np.argmin(x.data))
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        out.reshape(-1)[idx] = g.reshape(-1)[0]
        return (out,)

    return make_result(np.asarray(x.data.reshape(-1)[idx]), (x,), bw)


def concat(tensors, axis=1):
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    bounds = np.cumsum([0] + [d.shape[axis] for d in datas])

    def bw(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return make_result(out, tuple(tensors), bw)
