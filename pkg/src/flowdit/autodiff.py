"""Minimal reverse-mode automatic differentiation over numpy arrays.

A `Var` wraps an ndarray value plus a closure that maps the output cotangent
to parent cotangents. Every op in this module accepts either plain ndarrays
or Vars; with no Var among the arguments it returns a plain ndarray computed
by exactly the same numpy expressions, so inference and training share one
forward codebase and produce bit-identical values.

The op set is deliberately small: elementwise arithmetic, matmul, reductions,
shape moves, gather, softmax, rms_norm, and the nonlinearities used by the
model (tanh, sigmoid, silu, sin, cos). Anything else raises rather than
differentiating silently.
"""

from __future__ import annotations

import numpy as np

from . import numkernel


class Var:
    """Node in the reverse-mode tape."""

    # keep numpy from consuming Vars elementwise; reflected ops dispatch here
    __array_ufunc__ = None
    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, _parents=(), _vjp=None):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype})"

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad over the whole tape."""
        if self.value.ndim != 0 and self.value.size != 1:
            raise ValueError("backward() expects a scalar root")
        order, seen, stack = [], set(), [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    def __neg__(self):
        return mul(self, -1.0)

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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)


def val(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tracked(*xs):
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(g, shape):
    """Sum a cotangent back down to the broadcast source shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _node(out, parents, vjp):
    tracked = tuple(p for p in parents if isinstance(p, Var))
    return Var(out, tracked, vjp)


def add(a, b):
    out = val(a) + val(b)
    if not _tracked(a, b):
        return out

    def vjp(g):
        return tuple(
            _unbroadcast(g, p.value.shape) for p in (a, b) if isinstance(p, Var)
        )

    return _node(out, (a, b), vjp)


def sub(a, b):
    out = val(a) - val(b)
    if not _tracked(a, b):
        return out

    def vjp(g):
        gs = []
        if isinstance(a, Var):
            gs.append(_unbroadcast(g, a.value.shape))
        if isinstance(b, Var):
            gs.append(_unbroadcast(-g, b.value.shape))
        return tuple(gs)

    return _node(out, (a, b), vjp)


def mul(a, b):
    av, bv = val(a), val(b)
    out = av * bv
    if not _tracked(a, b):
        return out

    def vjp(g):
        gs = []
        if isinstance(a, Var):
            gs.append(_unbroadcast(g * bv, av.shape))
        if isinstance(b, Var):
            gs.append(_unbroadcast(g * av, bv.shape))
        return tuple(gs)

    return _node(out, (a, b), vjp)


def div(a, b):
    av, bv = val(a), val(b)
    out = av / bv
    if not _tracked(a, b):
        return out

    def vjp(g):
        gs = []
        if isinstance(a, Var):
            gs.append(_unbroadcast(g / bv, av.shape))
        if isinstance(b, Var):
            gs.append(_unbroadcast(-g * av / (bv * bv), bv.shape))
        return tuple(gs)

    return _node(out, (a, b), vjp)


def power(a, p):
    """a ** p for a constant scalar exponent."""
    if isinstance(p, Var):
        raise TypeError("power() exponent must be a constant")
    av = val(a)
    out = av**p
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (g * p * av ** (p - 1),))


def exp(a):
    out = np.exp(val(a))
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    av = val(a)
    out = np.log(av)
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (g / av,))


def tanh(a):
    out = np.tanh(val(a))
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    av = val(a)
    out = 1.0 / (1.0 + np.exp(-av))
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a):
    av = val(a)
    sig = 1.0 / (1.0 + np.exp(-av))
    out = av * sig
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (g * sig * (1.0 + av * (1.0 - sig)),))


def sin(a):
    av = val(a)
    out = np.sin(av)
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (g * np.cos(av),))


def cos(a):
    av = val(a)
    out = np.cos(av)
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (-g * np.sin(av),))


def matmul(a, b):
    av, bv = val(a), val(b)
    out = numkernel.matmul(av, bv)
    if not _tracked(a, b):
        return out

    def vjp(g):
        gs = []
        if isinstance(a, Var):
            gs.append(_unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape))
        if isinstance(b, Var):
            gs.append(_unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape))
        return tuple(gs)

    return _node(out, (a, b), vjp)


def _expand_reduced(g, shape, axis, keepdims):
    g = np.asarray(g)
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        g = np.expand_dims(g, tuple(a % len(shape) for a in axes))
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    av = val(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (_expand_reduced(g, av.shape, axis, keepdims),))


def mean(a, axis=None, keepdims=False):
    av = val(a)
    out = av.mean(axis=axis, keepdims=keepdims)
    if not _tracked(a):
        return out
    count = av.size / out.size
    return _node(
        out, (a,), lambda g: (_expand_reduced(g / count, av.shape, axis, keepdims),)
    )


def reshape(a, shape):
    av = val(a)
    out = av.reshape(shape)
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (g.reshape(av.shape),))


def swapaxes(a, ax1, ax2):
    out = np.swapaxes(val(a), ax1, ax2)
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def transpose(a, axes):
    av = val(a)
    out = av.transpose(axes)
    if not _tracked(a):
        return out
    inv = np.argsort(axes)
    return _node(out, (a,), lambda g: (g.transpose(inv),))


def concat(items, axis=-1):
    vals = [val(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    if not _tracked(*items):
        return out
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(p for p, x in zip(pieces, items) if isinstance(x, Var))

    return _node(out, tuple(items), vjp)


def stack(items, axis=0):
    vals = [val(x) for x in items]
    out = np.stack(vals, axis=axis)
    if not _tracked(*items):
        return out

    def vjp(g):
        return tuple(
            np.take(g, i, axis=axis) for i, x in enumerate(items) if isinstance(x, Var)
        )

    return _node(out, tuple(items), vjp)


def take(a, idx):
    """Basic or integer-array indexing; cotangent scatters (with accumulation)."""
    av = val(a)
    out = av[idx]
    if not _tracked(a):
        return out

    def vjp(g):
        ga = np.zeros_like(av)
        np.add.at(ga, idx, g)
        return (ga,)

    return _node(out, (a,), vjp)


def repeat(a, repeats, axis):
    """np.repeat with scalar repeats along one axis (GQA head expansion)."""
    av = val(a)
    out = np.repeat(av, repeats, axis=axis)
    if not _tracked(a):
        return out
    ax = axis % av.ndim

    def vjp(g):
        shape = av.shape[:ax] + (av.shape[ax], repeats) + av.shape[ax + 1 :]
        return (g.reshape(shape).sum(axis=ax + 1),)

    return _node(out, (a,), vjp)


def mask_fill(a, keep, fill):
    """Where keep (constant bool) holds, pass a through; elsewhere use fill."""
    av = val(a)
    out = np.where(keep, av, fill)
    if not _tracked(a):
        return out
    return _node(out, (a,), lambda g: (np.where(keep, g, 0.0),))


def softmax(a, axis=-1):
    av = val(a)
    out = numkernel.softmax(av, axis=axis)
    if not _tracked(a):
        return out

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (a,), vjp)


def rms_norm(a, gain, eps: float = 1e-6):
    """Differentiable twin of numkernel.rms_norm (same expression order)."""
    if not _tracked(a, gain):
        return numkernel.rms_norm(val(a), val(gain), eps)
    inv = power(add(mean(mul(a, a), axis=-1, keepdims=True), eps), -0.5)
    return mul(mul(a, inv), gain)
