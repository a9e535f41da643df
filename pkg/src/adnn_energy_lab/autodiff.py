"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps an ndarray and remembers, for each parent it was computed
from, a vector-Jacobian closure. Calling an op builds the graph implicitly;
`gradients` walks it once in reverse topological order and accumulates
per-parent contributions in a side table, so evaluation never mutates nodes
and a finished graph is safe to read from multiple threads.

The operator set is deliberately small: affine maps, relu / sigmoid / tanh,
softmax, elementwise arithmetic, reductions, max against a constant, the
Euclidean norm, and log. Everything downstream (losses, entropy, attack
objectives) is composed from these.
"""

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible for the requested op."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf from finite inputs."""


def _require_finite(data, op):
    if not np.isfinite(data).all():
        raise NonFiniteError("op %r produced a non-finite value" % op)


class Tensor:
    """Immutable graph node. `data` on leaves may be rebound by optimizers
    between graph constructions, never during evaluation."""

    __slots__ = ("data", "op", "_vjps")

    def __init__(self, data, _vjps=(), op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.op = op
        self._vjps = _vjps
        _require_finite(self.data, op)

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
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._bad_item()

    def _bad_item(self):
        raise ShapeError("item() needs a size-1 tensor, got shape %s" % (self.shape,))

    def __repr__(self):
        return "Tensor(op=%r, shape=%s)" % (self.op, self.shape)

    # operator sugar; constants are wrapped on the fly
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad, shape):
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _elementwise(a, b, fn, dfa, dfb, op):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = fn(a.data, b.data)
    except ValueError:
        raise ShapeError(
            "op %r cannot broadcast shapes %s and %s" % (op, a.shape, b.shape)
        ) from None
    vjps = (
        (a, lambda g: _unbroadcast(dfa(g, a.data, b.data), a.shape)),
        (b, lambda g: _unbroadcast(dfb(g, a.data, b.data), b.shape)),
    )
    return Tensor(out, vjps, op)


def add(a, b):
    return _elementwise(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b):
    return _elementwise(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b):
    return _elementwise(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul got shapes %s and %s" % (a.shape, b.shape))
    out = a.data @ b.data

    def grad_a(g):
        return g @ b.data.T

    def grad_b(g):
        if a.ndim == 1:
            return np.outer(a.data, g)
        return a.data.T @ g

    return Tensor(out, ((a, grad_a), (b, grad_b)), "matmul")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0.0
    return Tensor(np.where(mask, x.data, 0.0), ((x, lambda g: g * mask),), "relu")


def sigmoid(x):
    x = as_tensor(x)
    # exp overflow at very negative inputs still yields the right limit (0.0)
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor(out, ((x, lambda g: g * out * (1.0 - out)),), "sigmoid")


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return Tensor(out, ((x, lambda g: g * (1.0 - out * out)),), "tanh")


def log(x):
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    _require_finite(out, "log")
    return Tensor(out, ((x, lambda g: g / x.data),), "log")


def softmax(x):
    """Softmax along the last axis; rows of a 2-D input are independent."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_x(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return out * (g - inner)

    return Tensor(out, ((x, grad_x),), "softmax")


def log_softmax(x):
    """log(softmax(x)) computed without underflow, last axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def grad_x(g):
        return g - np.exp(out) * g.sum(axis=-1, keepdims=True)

    return Tensor(out, ((x, grad_x),), "log_softmax")


def tsum(x, axis=None):
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def grad_x(g):
        if axis is None:
            return np.broadcast_to(g, x.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()

    return Tensor(out, ((x, grad_x),), "sum")


def tmean(x, axis=None):
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError("mean over an empty axis")
    return mul(tsum(x, axis=axis), 1.0 / count)


def maximum(x, constant):
    """Elementwise max(x, constant); the subgradient at the kink is 0."""
    x = as_tensor(x)
    c = float(constant)
    mask = x.data > c
    return Tensor(np.where(mask, x.data, c), ((x, lambda g: g * mask),), "maximum")


def l2_norm(x, axis=None):
    """Euclidean norm, optionally per row. Subgradient at the origin is 0."""
    x = as_tensor(x)
    sq = (x.data * x.data).sum(axis=axis)
    out = np.sqrt(sq)

    def grad_x(g):
        denom = np.where(out > 0.0, out, 1.0)
        scale = g / denom * (out > 0.0)
        if axis is None:
            return scale * x.data
        return np.expand_dims(scale, axis) * x.data

    return Tensor(out, ((x, grad_x),), "l2_norm")


def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._vjps:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def gradients(output, wrt):
    """Gradients of a scalar `output` with respect to each tensor in `wrt`.

    Returns a list of ndarrays aligned with `wrt`; tensors the output does
    not depend on get zeros. Accumulation happens in a side table keyed by
    node identity, so the graph itself is left untouched.
    """
    output = as_tensor(output)
    if output.size != 1:
        raise ShapeError(
            "gradients needs a scalar output, got shape %s" % (output.shape,)
        )
    table = {id(output): np.ones_like(output.data)}
    grads = {id(t): None for t in wrt}
    # reverse topological order: every consumer of a node is processed
    # before the node itself, so its table entry is complete when read
    for node in reversed(_topo_order(output)):
        g = table.get(id(node))
        if g is None:
            continue
        if id(node) in grads:
            grads[id(node)] = g
        for parent, vjp in node._vjps:
            contribution = vjp(g)
            _require_finite(contribution, node.op + ".grad")
            key = id(parent)
            if key in table:
                table[key] = table[key] + contribution
            else:
                table[key] = contribution
    return [
        grads[id(t)] if grads[id(t)] is not None else np.zeros_like(t.data)
        for t in wrt
    ]
