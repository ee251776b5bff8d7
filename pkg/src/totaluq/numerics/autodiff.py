"""
Reverse-mode automatic differentiation on numpy arrays.

A :class:`Var` wraps an ndarray and records, for every operation that
produces it, the parent nodes together with the vector-Jacobian products
needed to push adjoints back to them. Calling :func:`gradient` runs one
reverse sweep over the recorded graph.

Supported primitives: ``+ - * / **``, ``@``, negation, ``exp``, ``log``,
``tanh``, ``sum``, ``dot``, indexing, reshape and transpose. Any other numpy
ufunc or array function applied to a :class:`Var` raises
:class:`UnsupportedPrimitiveError` when the computation is built, not later
during the sweep.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "UnsupportedPrimitiveError",
    "Var",
    "as_var",
    "dot",
    "exp",
    "gradient",
    "log",
    "square",
    "sum",
    "tanh",
    "value_and_grad",
]


class UnsupportedPrimitiveError(TypeError):
    """Raised when a non-differentiable operation is applied to a Var."""


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out the axes numpy broadcasting added or stretched
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Var:
    """Node of the differentiation graph.

    Parameters
    ----------
    value : array_like
        Forward value, stored as float64.
    parents : sequence of Var
        Inputs of the operation that produced this node.
    vjps : sequence of callables
        ``vjps[k](g)`` maps the adjoint of this node to the contribution to
        the adjoint of ``parents[k]``.
    """

    __slots__ = ("value", "grad", "_parents", "_vjps")
    __array_priority__ = 1000

    def __init__(self, value, parents: Sequence["Var"] = (), vjps: Sequence[Callable] = ()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._vjps = tuple(vjps)

    # --- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Var({self.value!r})"

    # --- arithmetic ----------------------------------------------------
    def __add__(self, other):
        other = as_var(other)
        a, b = self.shape, other.shape
        return Var(
            self.value + other.value,
            (self, other),
            (lambda g: _unbroadcast(g, a), lambda g: _unbroadcast(g, b)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = as_var(other)
        a, b = self.shape, other.shape
        return Var(
            self.value - other.value,
            (self, other),
            (lambda g: _unbroadcast(g, a), lambda g: _unbroadcast(-g, b)),
        )

    def __rsub__(self, other):
        return as_var(other) - self

    def __neg__(self):
        return Var(-self.value, (self,), (lambda g: -g,))

    def __mul__(self, other):
        other = as_var(other)
        x, y = self.value, other.value
        return Var(
            x * y,
            (self, other),
            (lambda g: _unbroadcast(g * y, x.shape), lambda g: _unbroadcast(g * x, y.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_var(other)
        x, y = self.value, other.value
        out = x / y
        return Var(
            out,
            (self, other),
            (
                lambda g: _unbroadcast(g / y, x.shape),
                lambda g: _unbroadcast(-g * out / y, y.shape),
            ),
        )

    def __rtruediv__(self, other):
        return as_var(other) / self

    def __pow__(self, p):
        if isinstance(p, Var):
            raise UnsupportedPrimitiveError("only constant exponents are supported")
        p = float(p)
        x = self.value
        return Var(x**p, (self,), (lambda g: g * p * x ** (p - 1.0),))

    def __matmul__(self, other):
        other = as_var(other)
        x, y = self.value, other.value

        def vjp_x(g):
            if y.ndim == 1:
                return np.multiply.outer(g, y) if x.ndim == 2 else g * y
            if x.ndim == 1:
                return y @ g
            return g @ y.T

        def vjp_y(g):
            if x.ndim == 1:
                return np.multiply.outer(x, g) if y.ndim == 2 else g * x
            if y.ndim == 1:
                return x.T @ g
            return x.T @ g

        return Var(x @ y, (self, other), (vjp_x, vjp_y))

    def __rmatmul__(self, other):
        return as_var(other) @ self

    # --- structural ----------------------------------------------------
    def __getitem__(self, idx):
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return out

        return Var(self.value[idx], (self,), (vjp,))

    def reshape(self, *shape):
        old = self.shape
        return Var(self.value.reshape(*shape), (self,), (lambda g: g.reshape(old),))

    @property
    def T(self):
        return Var(self.value.T, (self,), (lambda g: g.T,))

    def sum(self, axis=None):
        shape = self.shape

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, shape).copy()
            return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

        return Var(self.value.sum(axis=axis), (self,), (vjp,))

    # --- numpy protocol ------------------------------------------------
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedPrimitiveError(f"{ufunc.__name__}.{method} is not differentiable here")
        fn = _UFUNCS.get(ufunc)
        if fn is None:
            raise UnsupportedPrimitiveError(f"unsupported primitive: np.{ufunc.__name__}")
        return fn(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        fn = _FUNCTIONS.get(func)
        if fn is None:
            raise UnsupportedPrimitiveError(f"unsupported primitive: np.{func.__name__}")
        return fn(*args, **kwargs)

    def __float__(self):
        return float(self.value)


def as_var(x) -> Var:
    """Wrap constants; pass Vars through."""
    return x if isinstance(x, Var) else Var(x)


def exp(x):
    x = as_var(x)
    out = np.exp(x.value)
    return Var(out, (x,), (lambda g: g * out,))


def log(x):
    x = as_var(x)
    v = x.value
    return Var(np.log(v), (x,), (lambda g: g / v,))


def tanh(x):
    x = as_var(x)
    out = np.tanh(x.value)
    return Var(out, (x,), (lambda g: g * (1.0 - out * out),))


def square(x):
    return as_var(x) ** 2


def sum(x, axis=None):  # noqa: A001 - mirrors np.sum
    return as_var(x).sum(axis=axis)


def dot(a, b):
    return as_var(a) @ as_var(b)


_UFUNCS = {
    np.add: lambda a, b: as_var(a) + b,
    np.subtract: lambda a, b: as_var(a) - b,
    np.multiply: lambda a, b: as_var(a) * b,
    np.true_divide: lambda a, b: as_var(a) / b,
    np.negative: lambda a: -as_var(a),
    np.power: lambda a, b: as_var(a) ** b,
    np.matmul: lambda a, b: as_var(a) @ b,
    np.exp: exp,
    np.log: log,
    np.tanh: tanh,
    np.square: square,
}

_FUNCTIONS = {
    np.sum: lambda a, axis=None: sum(a, axis=axis),
    np.dot: dot,
}


def _toposort(root: Var) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out: Var) -> None:
    """Accumulate d(out)/d(node) into ``node.grad`` for every recorded node."""
    if out.size != 1:
        raise ValueError("backward requires a scalar output")
    order = _toposort(out)
    for node in order:
        node.grad = None
    out.grad = np.ones_like(out.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


def value_and_grad(f: Callable[[Var], Var]) -> Callable[[np.ndarray], tuple]:
    """Return ``x -> (f(x), df/dx)`` for a scalar-valued ``f``."""

    def wrapped(x):
        xv = Var(np.array(x, dtype=np.float64, copy=True))
        out = f(xv)
        if not isinstance(out, Var):
            return float(out), np.zeros_like(xv.value)
        backward(out)
        g = xv.grad if xv.grad is not None else np.zeros_like(xv.value)
        return float(out.value), np.asarray(g, dtype=np.float64).reshape(xv.shape)

    return wrapped


def gradient(f: Callable[[Var], Var], x) -> tuple:
    """Evaluate ``f`` at ``x`` and its gradient by one reverse sweep.

    Examples
    --------
    >>> gradient(lambda v: (v * v).sum(), [3.0])
    (9.0, array([6.]))
    """
    return value_and_grad(f)(x)
