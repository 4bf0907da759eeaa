"""Box (interval) domain: propagation, elided margin bounds, IBP loss, certification."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from . import kernels
from .errors import ContractError, DimensionError
from .network import Affine, Network

DataRange = Optional[Tuple[float, float]]


@dataclass
class IntervalTensor:
    """Elementwise ``[lower, upper]``; vectors or row batches."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape:
            raise DimensionError(f"bounds differ in shape: {self.lower.shape} vs {self.upper.shape}")
        if np.any(self.lower > self.upper):
            raise ContractError("interval lower bound exceeds upper bound")

    @classmethod
    def from_center_radius(cls, center, radius) -> "IntervalTensor":
        center = np.asarray(center, dtype=np.float64)
        radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), center.shape)
        if np.any(radius < 0):
            raise ContractError("radius must be non-negative")
        return cls(center - radius, center + radius)

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) * 0.5

    @property
    def radius(self) -> np.ndarray:
        return (self.upper - self.lower) * 0.5

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Per-point containment for points shaped like one bound (or a stack of them)."""
        points = np.asarray(points)
        return np.all((points >= self.lower) & (points <= self.upper), axis=-1)


def input_box(x, eps, data_range: DataRange = None) -> IntervalTensor:
    """``B(x, eps)`` clipped to the data range when one is declared."""
    if np.any(np.asarray(eps) < 0):
        raise ContractError("eps must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x - eps, x + eps
    if data_range is not None:
        x = np.clip(x, *data_range)
        lo = np.clip(np.minimum(lo, x), *data_range)
        hi = np.clip(np.maximum(hi, x), *data_range)
    return IntervalTensor(lo, hi)


def _check(net: Network, box: IntervalTensor):
    if box.lower.ndim not in (1, 2) or box.lower.shape[-1] != net.in_dim:
        raise DimensionError(f"box shape {box.lower.shape} does not match network input {net.in_dim}")
    return box.lower.ndim == 1


def propagate_box(net: Network, box: IntervalTensor) -> IntervalTensor:
    """Sound output box: affine maps ``c -> Wc + b``, ``r -> |W| r``; ReLU clamps endpoints."""
    single = _check(net, box)
    lo, hi = kernels.box_forward(net.kernel_layers(), box.lower, box.upper)
    if single:
        lo, hi = lo[0], hi[0]
    return IntervalTensor(lo, hi)


def margin_bounds(net: Network, box: IntervalTensor, y) -> np.ndarray:
    """Upper bounds on ``o_i - o_y`` with the subtraction folded into the last layer.

    Entry ``y`` is exactly 0. Never looser than :func:`naive_margin_bounds`.
    """
    single = _check(net, box)
    if not isinstance(net.layers[-1], Affine):
        raise ContractError("margin bounds need an affine last layer")
    out = kernels.margin_bounds(net.kernel_layers(), box.lower, box.upper, y)
    return out[0] if single else out


def naive_margin_bounds(net: Network, box: IntervalTensor, y) -> np.ndarray:
    """``upper(o_i) - lower(o_y)`` from independent per-logit bounds (``y`` entry set to 0)."""
    out = propagate_box(net, box)
    lo, hi = np.atleast_2d(out.lower), np.atleast_2d(out.upper)
    y = np.broadcast_to(np.asarray(y), (lo.shape[0],))
    rows = np.arange(lo.shape[0])
    m = hi - lo[rows, y][:, None]
    m[rows, y] = 0.0
    return m[0] if out.lower.ndim == 1 else m


def _logsumexp(m: np.ndarray) -> np.ndarray:
    mx = m.max(axis=-1, keepdims=True)
    return (mx + np.log(np.exp(m - mx).sum(axis=-1, keepdims=True)))[..., 0]


def ibp_loss(net: Network, x, y, eps, data_range: DataRange = None):
    """``ln(1 + sum_{i != y} exp(margin_i))`` over ``B(x, eps)``; array for row batches."""
    m = margin_bounds(net, input_box(x, eps, data_range), y)
    out = _logsumexp(m)  # the y column is 0, supplying the "1 +"
    return float(out) if np.ndim(out) == 0 else out


def ibp_loss_grad(net: Network, X, y, eps, weights=None, data_range: DataRange = None):
    """Per-row IBP losses and the gradient of their weighted sum.

    Returns ``(losses, grads)`` with ``grads`` aligned to ``net.parameters()``.
    """
    box = input_box(np.atleast_2d(X), eps, data_range)
    return kernels.ibp_loss_grad(net.kernel_layers(), box.lower, box.upper, y, weights)


def _penultimate_graph(net: Network, params: Sequence[ag.Var], L, U):
    g = params[0].graph
    c, r = g.const((L + U) * 0.5), g.const((U - L) * 0.5)
    k = 0
    for layer in net.layers[:-1]:
        if isinstance(layer, Affine):
            c = c @ params[k].T + params[k + 1]
            r = r @ ag.absolute(params[k]).T
            k += 2
        else:
            lo, hi = ag.relu(c - r), ag.relu(c + r)
            c, r = (lo + hi) * 0.5, (hi - lo) * 0.5
    return c, r, k


def output_radius_graph(net: Network, params: Sequence[ag.Var], box: IntervalTensor) -> ag.Var:
    """Output-box radii ``(n, d_out)`` recorded on the autograd tape."""
    L, U = np.atleast_2d(box.lower), np.atleast_2d(box.upper)
    _, r, k = _penultimate_graph(net, params, L, U)
    return r @ ag.absolute(params[k]).T


def ibp_loss_graph(net: Network, params: Sequence[ag.Var], box: IntervalTensor, y) -> ag.Var:
    """Per-row IBP loss recorded on the autograd tape (reference route)."""
    L, U = np.atleast_2d(box.lower), np.atleast_2d(box.upper)
    n = L.shape[0]
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (n,))
    c, r, k = _penultimate_graph(net, params, L, U)
    W, b = params[k], params[k + 1]
    K, d = W.shape
    D = W.reshape(1, K, d) - ag.gather_rows(W, y).reshape(n, 1, d)
    m = (ag.vsum(D * c.reshape(n, 1, d), axis=2)
         + ag.vsum(ag.absolute(D) * r.reshape(n, 1, d), axis=2)
         + (b.reshape(1, K) - ag.gather_rows(b, y).reshape(n, 1)))
    return ag.logsumexp(m, axis=1)


def certify_individual(net: Network, x, y, eps, data_range: DataRange = None):
    """True where every elided margin bound for a wrong class is negative."""
    m = np.atleast_2d(margin_bounds(net, input_box(x, eps, data_range), y))
    y_arr = np.broadcast_to(np.asarray(y), (m.shape[0],))
    m[np.arange(m.shape[0]), y_arr] = -np.inf
    ok = np.all(m < 0, axis=1)
    return bool(ok[0]) if np.ndim(x) == 1 else ok
