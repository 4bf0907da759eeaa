"""Projected sign-gradient attacks: per-input PGD and universal (shared) PGD."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError
from .network import Network


@dataclass
class AttackConfig:
    """PGD settings.

    ``step_size=None`` means ``2 * eps / steps`` for whatever radius the attack
    runs at. ``restarts`` counts independent runs; 0 and 1 both mean a single run.
    """

    steps: int = 20
    step_size: Optional[float] = None
    eps: float = 0.0
    random_init: bool = True
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("attack steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("attack step size must be positive")
        if self.eps < 0:
            raise ConfigError("attack eps must be non-negative")
        if self.restarts < 0:
            raise ConfigError("attack restarts must be non-negative")

    def alpha(self, eps: float) -> float:
        return self.step_size if self.step_size is not None else 2.0 * eps / self.steps

    def to_dict(self):
        return asdict(self)


def _rng(cfg: AttackConfig, rng):
    return rng if rng is not None else np.random.default_rng(cfg.seed)


def _bounds(X, eps, data_range, universal):
    """Per-coordinate feasible perturbation box ``[lo, hi]``."""
    d = X.shape[1]
    lo = np.full(d if universal else X.shape, -float(eps))
    hi = np.full(d if universal else X.shape, float(eps))
    if data_range is not None:
        rlo, rhi = data_range
        if universal:
            lo = np.maximum(lo, (rlo - X).max(axis=0))
            hi = np.minimum(hi, (rhi - X).min(axis=0))
        else:
            lo = np.maximum(lo, rlo - X)
            hi = np.minimum(hi, rhi - X)
        # inputs already outside the range keep only the zero perturbation feasible
        lo, hi = np.minimum(lo, 0.0), np.maximum(hi, 0.0)
    return lo, hi


def pgd_batch(net: Network, X, y, eps: float, cfg: AttackConfig, rng=None, data_range=None):
    """Independent PGD for every row of ``X``; returns perturbations ``(n, d)``.

    Each row keeps the highest cross-entropy iterate seen over all steps and
    restarts (the initial point included).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (n,))
    if eps < 0:
        raise ContractError("eps must be non-negative")
    if eps == 0:
        return np.zeros((n, d))
    rng = _rng(cfg, rng)
    layers = net.kernel_layers()
    lo, hi = _bounds(X, eps, data_range, universal=False)
    alpha = cfg.alpha(eps)
    best_v = np.zeros((n, d))
    best_loss = np.full(n, -np.inf)
    for _ in range(max(1, cfg.restarts)):
        v = rng.uniform(-eps, eps, size=(n, d)) if cfg.random_init else np.zeros((n, d))
        v = np.clip(v, lo, hi)
        for _ in range(cfg.steps):
            loss, g = kernels.ce_input_grad(layers, X + v, y)
            better = loss > best_loss
            best_loss = np.where(better, loss, best_loss)
            best_v[better] = v[better]
            v = np.clip(v + alpha * np.sign(g), lo, hi)
        loss = kernels.ce_input_grad(layers, X + v, y)[0]
        better = loss > best_loss
        best_v[better] = v[better]
        best_loss = np.where(better, loss, best_loss)
    return best_v


def pgd_single(net: Network, x, y: int, cfg: AttackConfig, rng=None, data_range=None, eps=None):
    """Adversarial perturbation ``v`` with ``||v||_inf <= eps`` for one input."""
    eps = cfg.eps if eps is None else eps
    return pgd_batch(net, np.asarray(x)[None, :], [y], eps, cfg, rng, data_range)[0]


def pgd_universal_groups(net: Network, X, y, groups, eps: float, cfg: AttackConfig,
                         rng=None, data_range=None):
    """One shared perturbation per group label; returns ``(n_groups, d)``.

    Groups are attacked simultaneously but independently; each group ascends
    its own mean cross-entropy and keeps its best iterate.
    """
    if len(X) == 0:
        raise ContractError("universal attack needs a non-empty batch")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (n,))
    groups = np.asarray(groups, dtype=np.intp)
    G = int(groups.max()) + 1
    if eps < 0:
        raise ContractError("eps must be non-negative")
    if eps == 0:
        return np.zeros((G, d))
    rng = _rng(cfg, rng)
    layers = net.kernel_layers()
    counts = np.bincount(groups, minlength=G).astype(np.float64)
    if data_range is None:
        lo = np.full((G, d), -float(eps))
        hi = np.full((G, d), float(eps))
    else:
        lo = np.stack([_bounds(X[groups == k], eps, data_range, True)[0] for k in range(G)])
        hi = np.stack([_bounds(X[groups == k], eps, data_range, True)[1] for k in range(G)])
    alpha = cfg.alpha(eps)

    def objective(U):
        loss, g = kernels.ce_input_grad(layers, X + U[groups], y)
        mean = np.bincount(groups, weights=loss, minlength=G) / counts
        gsum = np.zeros((G, d))
        np.add.at(gsum, groups, g)
        return mean, gsum

    best_u = np.zeros((G, d))
    best = np.full(G, -np.inf)
    for _ in range(max(1, cfg.restarts)):
        U = rng.uniform(-eps, eps, size=(G, d)) if cfg.random_init else np.zeros((G, d))
        U = np.clip(U, lo, hi)
        for _ in range(cfg.steps):
            mean, gsum = objective(U)
            better = mean > best
            best = np.where(better, mean, best)
            best_u[better] = U[better]
            U = np.clip(U + alpha * np.sign(gsum), lo, hi)
        mean, _ = objective(U)
        better = mean > best
        best = np.where(better, mean, best)
        best_u[better] = U[better]
    return best_u


def pgd_universal(net: Network, X, y, cfg: AttackConfig, rng=None, data_range=None, eps=None):
    """A single perturbation ``u`` ascending the batch-mean cross-entropy."""
    if len(X) == 0:
        raise ContractError("universal attack needs a non-empty batch")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    eps = cfg.eps if eps is None else eps
    return pgd_universal_groups(net, X, y, np.zeros(X.shape[0], dtype=np.intp), eps, cfg,
                                rng, data_range)[0]
