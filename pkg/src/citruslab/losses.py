"""Training and analysis losses built on box propagation.

Every batch loss returns a :class:`LossResult` holding the plain sum of its
terms (no normalization), the individual terms, the number of IBP
evaluations it took, and optionally the parameter gradients of the sum.
Attack points are computed first and then held constant, so gradients never
flow through PGD.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from . import kernels
from .attacks import AttackConfig, pgd_batch, pgd_universal
from .errors import ContractError
from .interval import DataRange, input_box
from .network import Network, forward


class LossKind(str, Enum):
    CLEAN = "clean"
    IBP = "ibp"
    SABR = "sabr"
    CITRUS = "citrus"
    CITRUS_SI = "citrus_si"
    ADV_UNIVERSAL = "adv_universal"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind
    eps: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if not 0.0 <= self.tau <= self.eps:
            raise ContractError(f"need 0 <= tau <= eps, got tau={self.tau}, eps={self.eps}")


@dataclass
class LossResult:
    """``rows`` is ``(lower, upper, labels)`` of every box that was evaluated,
    so the same sum can be re-differentiated on the autograd tape."""

    value: float
    terms: np.ndarray
    n_ibp_terms: int
    grads: Optional[List[np.ndarray]] = None
    rows: Optional[tuple] = None


def _batch(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (X.shape[0],)).copy()
    return X, y


def _check_tau(eps, tau):
    if not 0.0 <= tau <= eps:
        raise ContractError(f"need 0 <= tau <= eps, got tau={tau}, eps={eps}")


def _boxes(net, centers, y, radius, grad, data_range):
    """Per-row IBP losses over ``B(center, radius)`` and the gradient of their sum."""
    if data_range is not None:
        centers = np.clip(centers, *data_range)
    box = input_box(centers, radius, data_range)
    rows = (box.lower, box.upper, y)
    if grad:
        return (*kernels.ibp_loss_grad(net.kernel_layers(), box.lower, box.upper, y), rows)
    m = kernels.margin_bounds(net.kernel_layers(), box.lower, box.upper, y)
    mx = m.max(axis=1, keepdims=True)
    return mx[:, 0] + np.log(np.exp(m - mx).sum(axis=1)), None, rows


def cross_entropy(net: Network, x, y):
    """``logsumexp(o) - o_y``; float for one input, array for a batch."""
    o = np.atleast_2d(forward(net, x))
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (o.shape[0],))
    mx = o.max(axis=1, keepdims=True)
    ce = mx[:, 0] + np.log(np.exp(o - mx).sum(axis=1)) - o[np.arange(o.shape[0]), y]
    return float(ce[0]) if np.ndim(x) == 1 else ce


def margin_loss(net: Network, x, y):
    """``max_{i != y} (o_i - o_y)``: positive exactly when ``x`` is misclassified."""
    o = np.atleast_2d(forward(net, x))
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (o.shape[0],))
    rows = np.arange(o.shape[0])
    m = o - o[rows, y][:, None]
    m[rows, y] = -np.inf
    out = m.max(axis=1)
    return float(out[0]) if np.ndim(x) == 1 else out


def clean_loss(net: Network, X, y, grad: bool = False) -> LossResult:
    # a radius-0 box gives logsumexp(o - o_y), which is the cross-entropy
    X, y = _batch(X, y)
    terms, g, rows = _boxes(net, X, y, 0.0, grad, None)
    return LossResult(float(terms.sum()), terms, 0, g, rows)


def ibp_batch_loss(net: Network, X, y, eps: float, grad: bool = False,
                   data_range: DataRange = None) -> LossResult:
    X, y = _batch(X, y)
    terms, g, rows = _boxes(net, X, y, eps, grad, data_range)
    return LossResult(float(terms.sum()), terms, len(terms), g, rows)


def sabr_loss(net: Network, X, y, eps: float, tau: float, atk: AttackConfig, rng=None,
              grad: bool = False, data_range: DataRange = None) -> LossResult:
    """Sum over rows of the IBP loss with radius ``tau`` around ``x + v``,
    ``v`` found by PGD in ``B(0, eps - tau)``."""
    _check_tau(eps, tau)
    X, y = _batch(X, y)
    V = pgd_batch(net, X, y, eps - tau, atk, rng, data_range)
    terms, g, rows = _boxes(net, X + V, y, tau, grad, data_range)
    return LossResult(float(terms.sum()), terms, len(terms), g, rows)


def _cross(net, X, y, eps, tau, atk, rng, grad, data_range, same_input):
    _check_tau(eps, tau)
    X, y = _batch(X, y)
    m = X.shape[0]
    V = pgd_batch(net, X, y, eps - tau, atk, rng, data_range)
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    keep = np.ones((m, m), bool) if same_input else ~np.eye(m, dtype=bool)
    ii, jj = ii[keep], jj[keep]
    flat, g, rows = _boxes(net, X[ii] + V[jj], y[ii], tau, grad, data_range)
    terms = np.full((m, m), np.nan)
    terms[ii, jj] = flat
    return LossResult(float(flat.sum()), terms, len(flat), g, rows)


def citrus_loss(net: Network, X, y, eps: float, tau: float, atk: AttackConfig, rng=None,
                grad: bool = False, data_range: DataRange = None) -> LossResult:
    """Cross-input loss: ``sum_i sum_{j != i} L_IBP(x_i + v_j, y_i, tau)``.

    ``terms[i, j]`` holds each pair's loss; the diagonal is NaN.
    """
    if np.atleast_2d(X).shape[0] < 2:
        raise ContractError("cross-input loss needs a batch of at least 2")
    return _cross(net, X, y, eps, tau, atk, rng, grad, data_range, same_input=False)


def citrus_si_loss(net: Network, X, y, eps: float, tau: float, atk: AttackConfig, rng=None,
                   grad: bool = False, data_range: DataRange = None) -> LossResult:
    """As :func:`citrus_loss` plus the same-input ``j == i`` terms (``m**2`` total)."""
    if len(X) == 0:
        raise ContractError("loss needs a non-empty batch")
    return _cross(net, X, y, eps, tau, atk, rng, grad, data_range, same_input=True)


def adv_universal_loss(net: Network, X, y, eps: float, atk: AttackConfig, rng=None,
                       grad: bool = False, data_range: DataRange = None) -> LossResult:
    """Cross-entropy of the batch shifted by one universal PGD perturbation."""
    X, y = _batch(X, y)
    u = pgd_universal(net, X, y, atk, rng, data_range, eps=eps)
    terms, g, rows = _boxes(net, X + u, y, 0.0, grad, None)
    return LossResult(float(terms.sum()), terms, 0, g, rows)


def batch_loss(spec: LossSpec, net: Network, X, y, atk: AttackConfig, rng=None,
               grad: bool = False, data_range: DataRange = None) -> LossResult:
    k = spec.kind
    if k is LossKind.CLEAN:
        return clean_loss(net, X, y, grad)
    if k is LossKind.IBP:
        return ibp_batch_loss(net, X, y, spec.eps, grad, data_range)
    if k is LossKind.SABR:
        return sabr_loss(net, X, y, spec.eps, spec.tau, atk, rng, grad, data_range)
    if k is LossKind.CITRUS:
        return citrus_loss(net, X, y, spec.eps, spec.tau, atk, rng, grad, data_range)
    if k is LossKind.CITRUS_SI:
        return citrus_si_loss(net, X, y, spec.eps, spec.tau, atk, rng, grad, data_range)
    return adv_universal_loss(net, X, y, spec.eps, atk, rng, grad, data_range)


def normalizer(kind: LossKind, m: int) -> int:
    """Number of terms a batch of ``m`` contributes; the trainer divides by it."""
    kind = LossKind(kind)
    if kind is LossKind.CITRUS:
        return m * (m - 1)
    if kind is LossKind.CITRUS_SI:
        return m * m
    return m
