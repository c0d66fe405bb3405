"""Reverse-mode automatic differentiation on numpy arrays.

A small tape-based engine: every operation returns a ``Tensor`` node holding
its float64 numpy value, references to its parent nodes, and a closure that
maps the incoming gradient to vector-Jacobian products for the parents.
``Tensor.backward()`` walks the recorded graph once in reverse topological
order (iteratively, so arbitrarily deep rollout graphs are fine) and leaves
gradients on the leaf tensors created with ``requires_grad=True``.

Broadcasting follows numpy semantics; gradients are summed back down to the
parent's shape. Only the primitive set needed by network evaluation, forward
rollouts and the loss estimators is implemented: +, -, *, /, unary minus,
power by a constant, matmul, sin, cos, exp, tanh, sum, mean, concat and
reshape. Anything else raises ``UnsupportedPrimitive``.
"""
from __future__ import annotations

import contextlib

import numpy as np


class UnsupportedPrimitive(TypeError):
    """Raised when a computation uses an operation the tape cannot reverse."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure evaluation mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over the axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Node of the computation graph; wraps a float64 numpy array."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False, _parents=(), _vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjp = _vjp

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._vjp is not None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return self.value.item()

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, tracked={self.tracked})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every tracked leaf.

        Requires a scalar value. Intermediate gradients are freed as soon as
        they have been propagated, so peak memory stays near the widest
        frontier of the graph. Traversal order is a pure function of the
        graph construction order, which keeps reductions deterministic.
        """
        if self.value.size != 1:
            raise UnsupportedPrimitive("backward() requires a scalar tensor")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node in visited:
                continue
            visited.add(node)
            stack.append((node, True))
            for p in node._parents:
                if p.tracked and p not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            g = node.grad
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.tracked:
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg
            if not node.requires_grad:
                node.grad = None

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    """Lift numpy arrays / python scalars to constant (untracked) tensors."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, vjp) -> Tensor:
    if _GRAD_ENABLED and any(p.tracked for p in parents):
        return Tensor(value, _parents=tuple(parents), _vjp=vjp)
    return Tensor(value)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def power(a, exponent) -> Tensor:
    if isinstance(exponent, Tensor):
        raise UnsupportedPrimitive("power supports constant exponents only")
    a = as_tensor(a)
    # keep integral exponents integral so negative bases stay well-defined
    c = int(exponent) if float(exponent).is_integer() else float(exponent)
    return _node(a.value**c, (a,), lambda g: (g * c * a.value ** (c - 1),))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise UnsupportedPrimitive("matmul is implemented for 2-D operands only")
    return _node(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.value.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.value.shape
    count = a.value.size if axis is None else np.prod(
        [shape[i] for i in np.atleast_1d(axis)]
    )

    def vjp(g):
        scaled = g / count
        if axis is None:
            return (np.broadcast_to(scaled, shape),)
        gg = scaled if keepdims else np.expand_dims(scaled, axis)
        return (np.broadcast_to(gg, shape),)

    return _node(a.value.mean(axis=axis, keepdims=keepdims), (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.value for t in ts], axis=axis), ts, vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))
