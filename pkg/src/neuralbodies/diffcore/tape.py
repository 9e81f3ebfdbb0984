"""Reverse-mode automatic differentiation over a dynamically recorded tape.

Every operation appends a node holding its value, the ids of its inputs and a
closure mapping the output cotangent to input cotangents.  Nodes are appended
in evaluation order, so the insertion order is already a topological order and
the backward sweep is a single reverse pass.

Example
-------
>>> tape = Tape()
>>> x = tape.variable(np.array(3.0), name="x")
>>> y = x * x
>>> backward(tape, output=y)["x"]
array(6.)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigurationError, NumericalError

ABS_DELTA = 1e-8


@dataclass
class Node:
    op: str
    inputs: tuple
    value: np.ndarray
    vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
    name: Optional[str] = None


@dataclass
class Tape:
    """Linear record of tensor operations."""

    nodes: list = field(default_factory=list)
    names: dict = field(default_factory=dict)
    backward_visits: int = 0

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, inputs, value, vjp=None, name=None):
        for i in inputs:
            if i >= len(self.nodes):
                raise ConfigurationError("tape input refers to a later node")
        self.nodes.append(Node(op, tuple(inputs), value, vjp, name))
        return Tensor(self, len(self.nodes) - 1)

    def constant(self, value):
        return self._push("const", (), _checked(value))

    def variable(self, value, name):
        """Register a named leaf; a repeated name returns the existing leaf."""
        if name in self.names:
            return Tensor(self, self.names[name])
        t = self._push("leaf", (), _checked(value), name=name)
        self.names[name] = t.index
        return t

    def parameter(self, name, value):
        return self.variable(value, name)


def _checked(value):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericalError("non-finite values in tensor construction")
    return arr


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Handle to a tape node; arithmetic on handles records new nodes."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node={self.index})"

    def _lift(self, other):
        if isinstance(other, Tensor):
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self._lift(other)))

    def __rsub__(self, other):
        return add(self._lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ConfigurationError("division by a tensor is not supported")
        return mul(self, self.tape.constant(1.0 / np.asarray(other, dtype=float)))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def __rmatmul__(self, other):
        return matmul(self._lift(other), self)


def _record(op, inputs, value, vjp):
    tape = inputs[0].tape
    return tape._push(op, [t.index for t in inputs], value, vjp)


def add(a, b):
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), a.value + b.value,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a):
    return _record("neg", (a,), -a.value, lambda g: (-g,))


def mul(a, b):
    av, bv = a.value, b.value
    return _record("mul", (a, b), av * bv,
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def matmul(a, b):
    """``a @ b`` with ``b`` two-dimensional and ``a`` of rank >= 1."""
    av, bv = a.value, b.value
    if bv.ndim != 2:
        raise ConfigurationError("right matmul operand must be 2-D")
    if av.shape[-1] != bv.shape[0]:
        raise ConfigurationError(f"matmul dimension mismatch {av.shape} @ {bv.shape}")

    def vjp(g):
        ga = g @ bv.T
        if av.ndim == 1:
            gb = np.outer(av, g)
        else:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, bv.shape[1])
        return ga, gb

    return _record("matmul", (a, b), av @ bv, vjp)


def tanh(a):
    y = np.tanh(a.value)
    return _record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    y = _sigmoid(a.value)
    return _record("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def softplus(a):
    x = a.value
    return _record("softplus", (a,), _softplus(x), lambda g: (g * _sigmoid(x),))


def smooth_abs(a, delta=ABS_DELTA):
    """``sqrt(x^2 + delta^2)``: absolute value with a defined gradient at 0."""
    x = a.value
    y = np.sqrt(x * x + delta * delta)
    return _record("smooth_abs", (a,), y, lambda g: (g * x / y,))


def reciprocal(a):
    with np.errstate(divide="ignore"):
        y = 1.0 / a.value  # a zero divisor is reported as non-finite by _record
    return _record("reciprocal", (a,), y, lambda g: (-g * y * y,))


def square(a):
    x = a.value
    return _record("square", (a,), x * x, lambda g: (2.0 * g * x,))


def sqrt(a):
    y = np.sqrt(a.value)
    return _record("sqrt", (a,), y, lambda g: (0.5 * g / y,))


def norm(a, axis=-1):
    """Euclidean norm along ``axis``; gradient is undefined at the origin."""
    x = a.value
    y = np.sqrt(np.sum(x * x, axis=axis))

    def vjp(g):
        return (np.expand_dims(g / y, axis) * x,)

    return _record("norm", (a,), y, vjp)


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    x = a.value
    shape = x.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record("sum", (a,), np.sum(x, axis=axis), vjp)


def mean(a, axis=None):
    x = a.value
    n = x.size if axis is None else x.shape[axis]
    return sum(a, axis=axis) * (1.0 / n)


def reshape(a, shape):
    old = a.shape
    return _record("reshape", (a,), a.value.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a):
    return _record("transpose", (a,), a.value.T, lambda g: (g.T,))


def concat(tensors, axis=-1):
    values = [t.value for t in tensors]
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record("concat", tuple(tensors), np.concatenate(values, axis=axis), vjp)


def backward(tape, seed=None, output=None):
    """Propagate cotangents from ``output`` back to every named leaf.

    ``output`` defaults to the last recorded node and ``seed`` to ones.
    Returns a dict mapping leaf names to gradients; leaves that do not
    influence the output get zeros.
    """
    if not tape.nodes:
        raise ConfigurationError("empty tape")
    out = len(tape.nodes) - 1 if output is None else output.index
    out_value = tape.nodes[out].value
    if seed is None:
        seed = np.ones_like(out_value)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != out_value.shape:
        raise ConfigurationError(f"seed shape {seed.shape} != output shape {out_value.shape}")

    grads = [None] * (out + 1)
    grads[out] = seed
    for i in range(out, -1, -1):
        tape.backward_visits += 1
        g = grads[i]
        node = tape.nodes[i]
        if g is None or node.vjp is None:
            continue
        for j, gj in zip(node.inputs, node.vjp(g)):
            if gj is None:
                continue
            grads[j] = gj if grads[j] is None else grads[j] + gj

    result = {}
    for name, idx in tape.names.items():
        g = grads[idx] if idx <= out else None
        result[name] = np.zeros_like(tape.nodes[idx].value) if g is None else g
    return result


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x):
    return np.logaddexp(0.0, x)
