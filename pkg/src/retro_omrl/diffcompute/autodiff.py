"""Tape-free reverse-mode autodiff over numpy arrays.

Each ``Tensor`` remembers its parents and a closure that pushes the upstream
gradient back to them. ``backward`` walks the graph in reverse topological
order. Only the handful of ops the networks and losses in this package need
are provided.
"""
from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    # sum out axes that were broadcast in the forward pass
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        data = np.asarray(data)
        # float64 throughout; extended precision passes through for numerical checks
        self.data = data if data.dtype == np.longdouble else data.astype(np.float64, copy=False)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # -- bookkeeping --------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
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
        self._accumulate(np.broadcast_to(grad, self.data.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior nodes do not need to keep their gradient
                    node.grad = None

    # -- arithmetic ---------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor(self.data + other.data, _parents=(self, other), _backward=back)

    __radd__ = __add__

    def __neg__(self):
        def back(g):
            self._accumulate(-g)

        return Tensor(-self.data, _parents=(self,), _backward=back)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor(self.data * other.data, _parents=(self, other), _backward=back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / other.data**2, other.shape)
                )

        return Tensor(self.data / other.data, _parents=(self, other), _backward=back)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        p = float(exponent)

        def back(g):
            self._accumulate(g * p * self.data ** (p - 1.0))

        return Tensor(self.data**p, _parents=(self,), _backward=back)

    def __matmul__(self, other):
        other = as_tensor(other)

        def back(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return Tensor(self.data @ other.data, _parents=(self, other), _backward=back)

    # -- shape ops ----------------------------------------------------
    def __getitem__(self, idx):
        def back(g):
            full = np.zeros_like(self.data)
            if _is_basic_index(idx):
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            self._accumulate(full)

        return Tensor(self.data[idx], _parents=(self,), _backward=back)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]

        def back(g):
            self._accumulate(g.reshape(self.shape))

        return Tensor(self.data.reshape(shape), _parents=(self,), _backward=back)

    @property
    def T(self):
        def back(g):
            self._accumulate(g.T)

        return Tensor(self.data.T, _parents=(self,), _backward=back)

    def sum(self, axis=None, keepdims=False):
        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))

        return Tensor(
            self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), _backward=back
        )

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    # -- elementwise nonlinearities -----------------------------------
    def exp(self):
        out = np.exp(self.data)

        def back(g):
            self._accumulate(g * out)

        return Tensor(out, _parents=(self,), _backward=back)

    def log(self):
        def back(g):
            self._accumulate(g / self.data)

        return Tensor(np.log(self.data), _parents=(self,), _backward=back)

    def tanh(self):
        out = np.tanh(self.data)

        def back(g):
            self._accumulate(g * (1.0 - out**2))

        return Tensor(out, _parents=(self,), _backward=back)

    def relu(self):
        # subgradient 0 at the kink
        mask = self.data > 0

        def back(g):
            self._accumulate(g * mask)

        return Tensor(np.where(mask, self.data, 0.0), _parents=(self,), _backward=back)

    def softplus(self):
        x = self.data
        out = np.logaddexp(0.0, x)

        def back(g):
            self._accumulate(g / (1.0 + np.exp(-x)))

        return Tensor(out, _parents=(self,), _backward=back)

    def sqrt(self):
        return self**0.5

    def square(self):
        return self * self

    def logsumexp(self, axis=-1, keepdims=False):
        m = self.data.max(axis=axis, keepdims=True)
        shifted = self - m
        out = shifted.exp().sum(axis=axis, keepdims=True).log() + m
        if not keepdims:
            out = out.reshape(*np.squeeze(out.data, axis=axis).shape)
        return out

    def log_softmax(self, axis=-1):
        return self - self.logsumexp(axis=axis, keepdims=True)

    def softmax(self, axis=-1):
        return self.log_softmax(axis=axis).exp()


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, np.integer)) or p is None or p is Ellipsis for p in parts)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _backward=back,
    )


def stack(tensors, axis=0):
    return concat([as_tensor(t).reshape(*_expand(t, axis)) for t in tensors], axis=axis)


def _expand(t, axis):
    shape = list(as_tensor(t).shape)
    shape.insert(axis if axis >= 0 else len(shape) + 1 + axis, 1)
    return shape


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    # ties route the gradient to the first argument
    take_a = a.data <= b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return Tensor(np.minimum(a.data, b.data), _parents=(a, b), _backward=back)
