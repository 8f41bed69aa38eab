"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` records the operation that produced it together with a
closure mapping the output cotangent to the cotangents of its parents.
:func:`gradients` walks the graph in reverse topological order.

Everything is float64 and every reduction is a numpy reduction over a fixed
axis order, so forward and backward passes are bit-reproducible.
"""
from __future__ import annotations

import numpy as np

from .errors import UsageError

__all__ = [
    "Tensor", "tensor", "parameter", "gradients",
    "exp", "log", "relu", "leaky_relu", "softplus", "sigmoid",
    "logsumexp", "square", "absolute", "concat",
]


def _as_array(value):
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "_parents", "_backward", "requires_grad", "name")

    __array_priority__ = 100.0

    def __init__(self, data, parents=(), backward=None, requires_grad=False, name=None):
        self.data = _as_array(data)
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{label})"

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        other = _lift(other)
        a, b = self.shape, other.shape
        return Tensor(self.data + other.data, (self, other),
                      lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        a, b = self.shape, other.shape
        return Tensor(self.data - other.data, (self, other),
                      lambda g: (_unbroadcast(g, a), -_unbroadcast(g, b)))

    def __rsub__(self, other):
        return _lift(other) - self

    def __mul__(self, other):
        other = _lift(other)
        x, y = self.data, other.data
        return Tensor(x * y, (self, other),
                      lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        x, y = self.data, other.data
        out = x / y
        return Tensor(out, (self, other),
                      lambda g: (_unbroadcast(g / y, x.shape),
                                 _unbroadcast(-g * out / y, y.shape)))

    def __rtruediv__(self, other):
        return _lift(other) / self

    def __neg__(self):
        return Tensor(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise UsageError("only constant exponents are supported")
        p = float(exponent)
        x = self.data
        return Tensor(x ** p, (self,), lambda g: (g * p * x ** (p - 1.0),))

    def __matmul__(self, other):
        other = _lift(other)
        x, y = self.data, other.data
        if x.ndim != 2 or y.ndim != 2:
            raise UsageError("matmul expects 2-d operands")
        return Tensor(x @ y, (self, other), lambda g: (g @ y.T, x.T @ g))

    def __rmatmul__(self, other):
        return _lift(other) @ self

    def __getitem__(self, index):
        x = self.data
        def backward(g):
            full = np.zeros_like(x)
            if _needs_add_at(index):
                np.add.at(full, index, g)
            else:
                full[index] = g
            return (full,)
        return Tensor(x[index], (self,), backward)

    # -- shape ---------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),))

    @property
    def T(self):
        return Tensor(self.data.T, (self,), lambda g: (g.T,))

    # -- reductions ----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        src = self.shape
        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src).copy(),)
        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def _needs_add_at(index):
    # Fancy (integer-array) indexing may repeat positions; slices never do.
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _lift(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def tensor(data, name=None):
    """A constant (non-trainable) graph leaf."""
    return Tensor(data, name=name)


def parameter(data, name=None):
    """A trainable graph leaf. The array is copied."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


# -- elementwise functions ------------------------------------------------

def exp(x):
    out = np.exp(x.data)
    return Tensor(out, (x,), lambda g: (g * out,))


def log(x):
    v = x.data
    return Tensor(np.log(v), (x,), lambda g: (g / v,))


def square(x):
    v = x.data
    return Tensor(v * v, (x,), lambda g: (2.0 * g * v,))


def absolute(x):
    v = x.data
    return Tensor(np.abs(v), (x,), lambda g: (g * np.sign(v),))


def relu(x):
    v = x.data
    mask = v > 0
    return Tensor(np.where(mask, v, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope=0.02):
    v = x.data
    scale = np.where(v > 0, 1.0, slope)
    return Tensor(v * scale, (x,), lambda g: (g * scale,))


def sigmoid(x):
    out = _sigmoid(x.data)
    return Tensor(out, (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(v):
    # Split by sign so exp never overflows.
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x):
    """log(1 + exp(x)), stable for large |x|."""
    v = x.data
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    return Tensor(out, (x,), lambda g: (g * _sigmoid(v),))


def logsumexp(x, axis=-1, keepdims=False):
    v = x.data
    peak = np.max(v, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    shifted = np.exp(v - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.log(total) + peak
    weights = shifted / total

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return Tensor(out, (x,), backward)


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                  lambda g: tuple(np.split(g, splits, axis=axis)))


# -- reverse sweep --------------------------------------------------------

def _topological_order(root):
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def gradients(loss, params):
    """Gradient of the scalar ``loss`` with respect to each of ``params``.

    Parameters that do not influence ``loss`` get an exact zero array.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise UsageError(f"loss must be a scalar tensor, got shape {getattr(loss, 'shape', None)}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None) if node._backward is not None else grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [np.array(grads.get(id(p), np.zeros_like(p.data)), dtype=np.float64).reshape(p.shape)
            for p in params]
