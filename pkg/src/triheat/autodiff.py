"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a new :class:`DiffArray` holding values plus a
closure that routes the output gradient to its parents.  ``backward`` walks
the tape in reverse topological order from a scalar sink, re-zeroing the
gradients of reachable nodes first, so graphs can be rebuilt and
re-differentiated freely.  Single-threaded per graph; independent graphs
may run concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


class DiffArray:
    """A dense float64 array with gradient storage and tape provenance."""

    __slots__ = ("values", "grad", "_parents", "_backward_fn", "name")

    def __init__(self, values, parents=(), backward_fn=None, name: str = ""):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"DiffArray{label}(shape={self.values.shape})"


def constant(values, name: str = "") -> DiffArray:
    """Leaf node; gradients are still computed but carry no parents."""
    return DiffArray(values, name=name)


def _as_node(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> DiffArray:
    a, b = _as_node(a), _as_node(b)
    out = DiffArray(a.values + b.values, parents=(a, b))

    def backward_fn(g):
        a.grad += _unbroadcast(g, a.values.shape)
        b.grad += _unbroadcast(g, b.values.shape)

    out._backward_fn = backward_fn
    return out


def sub(a, b) -> DiffArray:
    a, b = _as_node(a), _as_node(b)
    out = DiffArray(a.values - b.values, parents=(a, b))

    def backward_fn(g):
        a.grad += _unbroadcast(g, a.values.shape)
        b.grad -= _unbroadcast(g, b.values.shape)

    out._backward_fn = backward_fn
    return out


def multiply(a, b) -> DiffArray:
    a, b = _as_node(a), _as_node(b)
    out = DiffArray(a.values * b.values, parents=(a, b))

    def backward_fn(g):
        a.grad += _unbroadcast(g * b.values, a.values.shape)
        b.grad += _unbroadcast(g * a.values, b.values.shape)

    out._backward_fn = backward_fn
    return out


def matrix_multiply(a, b) -> DiffArray:
    a, b = _as_node(a), _as_node(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise DimensionError("matrix_multiply expects 2-D operands")
    if a.values.shape[1] != b.values.shape[0]:
        raise DimensionError(
            f"inner dimensions differ: {a.values.shape} @ {b.values.shape}"
        )
    out = DiffArray(a.values @ b.values, parents=(a, b))

    def backward_fn(g):
        a.grad += g @ b.values.T
        b.grad += a.values.T @ g

    out._backward_fn = backward_fn
    return out


def relu(a) -> DiffArray:
    a = _as_node(a)
    out = DiffArray(np.maximum(a.values, 0.0), parents=(a,))

    def backward_fn(g):
        a.grad += g * (a.values > 0.0)

    out._backward_fn = backward_fn
    return out


def reshape(a, shape) -> DiffArray:
    a = _as_node(a)
    out = DiffArray(a.values.reshape(shape), parents=(a,))

    def backward_fn(g):
        a.grad += g.reshape(a.values.shape)

    out._backward_fn = backward_fn
    return out


def concat(nodes, axis: int = -1) -> DiffArray:
    nodes = [_as_node(n) for n in nodes]
    out = DiffArray(np.concatenate([n.values for n in nodes], axis=axis), parents=tuple(nodes))
    sizes = [n.values.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for node, start, stop in zip(nodes, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            node.grad += g[tuple(index)]

    out._backward_fn = backward_fn
    return out


def softmax_over_axes(a, axes) -> DiffArray:
    """Softmax normalized jointly over ``axes``, stabilized by max subtraction."""
    a = _as_node(a)
    axes = tuple(int(ax) % a.values.ndim for ax in axes)
    shifted = a.values - a.values.max(axis=axes, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axes, keepdims=True)
    out = DiffArray(y, parents=(a,))

    def backward_fn(g):
        a.grad += y * (g - (g * y).sum(axis=axes, keepdims=True))

    out._backward_fn = backward_fn
    return out


def ssum(a) -> DiffArray:
    """Total sum to a scalar."""
    a = _as_node(a)
    out = DiffArray(a.values.sum(), parents=(a,))

    def backward_fn(g):
        a.grad += g * np.ones_like(a.values)

    out._backward_fn = backward_fn
    return out


def abs_sum(a) -> DiffArray:
    """Sum of absolute values (L1); subgradient 0 at exact zeros."""
    a = _as_node(a)
    out = DiffArray(np.abs(a.values).sum(), parents=(a,))

    def backward_fn(g):
        a.grad += g * np.sign(a.values)

    out._backward_fn = backward_fn
    return out


def square_sum(a) -> DiffArray:
    """Sum of squares (squared L2)."""
    a = _as_node(a)
    out = DiffArray((a.values * a.values).sum(), parents=(a,))

    def backward_fn(g):
        a.grad += g * 2.0 * a.values

    out._backward_fn = backward_fn
    return out


def expectation_over_grid(probs, grid_ndim: int) -> DiffArray:
    """Expected grid index per axis under a normalized distribution.

    The last ``grid_ndim`` axes of ``probs`` are the grid; the output
    appends one coordinate per grid axis ordered fastest-varying first, so a
    (..., D, H, W) input yields (..., 3) coordinates ordered (x, y, z).
    Combined with :func:`softmax_over_axes` this is the differentiable
    soft-argmax coordinate readout.
    """
    probs = _as_node(probs)
    if grid_ndim < 1 or grid_ndim > probs.values.ndim:
        raise DimensionError("grid_ndim must be between 1 and the input rank")
    grid_axes = tuple(range(probs.values.ndim - grid_ndim, probs.values.ndim))
    grid_shape = probs.values.shape[-grid_ndim:]
    coord_fields = []
    for i, axis in enumerate(reversed(grid_axes)):
        ramp = np.arange(probs.values.shape[axis], dtype=np.float64)
        field_shape = [1] * grid_ndim
        field_shape[axis - (probs.values.ndim - grid_ndim)] = grid_shape[
            axis - (probs.values.ndim - grid_ndim)
        ]
        coord_fields.append(ramp.reshape(field_shape))
    values = np.stack(
        [(probs.values * field).sum(axis=grid_axes) for field in coord_fields], axis=-1
    )
    out = DiffArray(values, parents=(probs,))

    def backward_fn(g):
        acc = np.zeros_like(probs.values)
        for i, field in enumerate(coord_fields):
            g_i = g[..., i].reshape(g.shape[:-1] + (1,) * grid_ndim)
            acc += g_i * field
        probs.grad += acc

    out._backward_fn = backward_fn
    return out


def _topological_order(sink: DiffArray) -> list[DiffArray]:
    order: list[DiffArray] = []
    seen: set[int] = set()
    stack: list[tuple[DiffArray, bool]] = [(sink, False)]
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


def backward(sink: DiffArray) -> None:
    """Populate gradients of every node reachable from a scalar sink."""
    if sink.values.size != 1:
        raise DimensionError(
            f"backward sink must be scalar, got shape {sink.values.shape}"
        )
    order = _topological_order(sink)
    for node in order:
        node.grad = np.zeros_like(node.values)
    sink.grad = np.ones_like(sink.values)
    for node in reversed(order):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)
