"""Define-by-run reverse-mode differentiation over numpy arrays.

A :class:`Graph` is an append-only tape. Every operation on :class:`Var`
records a node whose inputs were created earlier, so the tape order is a
topological order and :meth:`Graph.backward` is a single reverse sweep.

This is the reference route for gradients. The trainer's fast path uses the
fused kernels in :mod:`citruslab.kernels`, which are tested against it.
"""
from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import ContractError
from .network import Affine, Network


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    __slots__ = ("value", "graph", "id", "parents", "_backward", "op")
    __array_ufunc__ = None  # ndarray <op> Var dispatches to the reflected Var operator

    def __init__(self, graph: "Graph", value, parents=(), backward: Optional[Callable] = None,
                 op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.graph = graph
        self.parents = tuple(parents)
        self._backward = backward
        self.op = op
        self.id = graph._append(self)

    @property
    def shape(self):
        return self.value.shape

    def _wrap(self, other) -> "Var":
        return other if isinstance(other, Var) else self.graph.const(other)

    def __add__(self, other):
        other = self._wrap(other)
        a, b = self.shape, other.shape
        return Var(self.graph, self.value + other.value, (self, other),
                   lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = self._wrap(other)
        a, b = self.shape, other.shape
        return Var(self.graph, self.value - other.value, (self, other),
                   lambda g: (_unbroadcast(g, a), -_unbroadcast(g, b)), "sub")

    def __rsub__(self, other):
        return self._wrap(other) - self

    def __mul__(self, other):
        other = self._wrap(other)
        x, y = self.value, other.value
        return Var(self.graph, x * y, (self, other),
                   lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)), "mul")

    __rmul__ = __mul__

    def __neg__(self):
        return Var(self.graph, -self.value, (self,), lambda g: (-g,), "neg")

    def __matmul__(self, other):
        other = self._wrap(other)
        x, y = self.value, other.value
        if x.ndim != 2 or y.ndim != 2:
            raise ContractError("matmul is defined for 2-d operands only")
        return Var(self.graph, x @ y, (self, other), lambda g: (g @ y.T, x.T @ g), "matmul")

    @property
    def T(self):
        return Var(self.graph, self.value.T, (self,), lambda g: (g.T,), "transpose")

    def reshape(self, *shape):
        old = self.shape
        return Var(self.graph, self.value.reshape(*shape), (self,),
                   lambda g: (g.reshape(old),), "reshape")

    def __repr__(self):
        return f"Var(id={self.id}, op={self.op}, shape={self.shape})"


def relu(x: Var) -> Var:
    mask = x.value > 0
    return Var(x.graph, np.maximum(x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def absolute(x: Var) -> Var:
    s = np.sign(x.value)  # subgradient 0 at 0
    return Var(x.graph, np.abs(x.value), (x,), lambda g: (g * s,), "abs")


def vsum(x: Var, axis=None) -> Var:
    shape = x.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Var(x.graph, x.value.sum(axis=axis), (x,), back, "sum")


def logsumexp(x: Var, axis: int = -1) -> Var:
    m = x.value.max(axis=axis, keepdims=True)
    e = np.exp(x.value - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    p = e / s
    return Var(x.graph, out, (x,), lambda g: (np.expand_dims(g, axis) * p,), "logsumexp")


def gather_rows(x: Var, idx) -> Var:
    """``x[idx]`` for an integer index array along axis 0."""
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Var(x.graph, x.value[idx], (x,), back, "gather")


def pick(x: Var, idx) -> Var:
    """Per-row selection ``x[n, idx[n]]`` of a 2-d ``x``."""
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[rows, idx] = g
        return (out,)

    return Var(x.graph, x.value[rows, idx], (x,), back, "pick")


class Graph:
    """Append-only computation tape with registered parameter nodes."""

    def __init__(self):
        self.nodes: List[Var] = []
        self.params: List[Var] = []
        self._grads: Dict[int, np.ndarray] = {}
        self.visits = 0

    def _append(self, var: Var) -> int:
        self.nodes.append(var)
        return len(self.nodes) - 1

    def param(self, value) -> Var:
        v = Var(self, np.array(value, dtype=np.float64), op="param")
        self.params.append(v)
        return v

    def const(self, value) -> Var:
        return Var(self, value, op="const")

    def backward(self, loss: Var) -> List[np.ndarray]:
        """Gradients of scalar ``loss`` for every registered parameter, in order."""
        if loss.graph is not self:
            raise ContractError("loss belongs to another graph")
        if loss.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: Dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        self.visits = 0
        for node in reversed(self.nodes[: loss.id + 1]):
            self.visits += 1
            g = grads.get(node.id)
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node.parents, node._backward(g)):
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
        self._grads = grads
        return [grads.get(p.id, np.zeros_like(p.value)) for p in self.params]

    def grad(self, var: Var) -> np.ndarray:
        """Gradient of the last ``backward`` loss with respect to ``var``."""
        return self._grads.get(var.id, np.zeros_like(var.value))


def bind(graph: Graph, net: Network) -> List[Var]:
    """Register ``net``'s parameters on ``graph`` (order of ``net.parameters()``)."""
    return [graph.param(p) for p in net.parameters()]


def forward_graph(net: Network, params: Sequence[Var], x: Var) -> Var:
    """Row-batch forward pass on the tape; ``x`` has shape ``(n, d_in)``."""
    h, k = x, 0
    for layer in net.layers:
        if isinstance(layer, Affine):
            h = h @ params[k].T + params[k + 1]
            k += 2
        else:
            h = relu(h)
    return h


def cross_entropy_graph(logits: Var, y) -> Var:
    """Per-row cross-entropy ``logsumexp(o) - o_y``, shape ``(n,)``."""
    return logsumexp(logits, axis=1) - pick(logits, y)
