"""Exhaustive grid oracle for common perturbations.

Every perturbation of a finite lattice in ``B(0, eps)`` is applied to every
input, giving a boolean misclassification mask. Common-perturbation sets,
expected worst-case losses and the inequalities relating them are then
exact statements about that finite universe, so the checkers here are hard
assertions rather than statistical ones.

Means over inputs use ``math.fsum`` so that any evaluation order produces
bitwise-identical values.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .losses import margin_loss
from .network import Affine, Network, ReLU, predict


@dataclass(frozen=True)
class PerturbationGrid:
    """Lattice ``{-eps + 2 eps t / (R - 1)}^dim``; ``R`` odd so 0 is a point."""

    eps: float
    resolution: int = 41
    dim: int = 2

    def __post_init__(self):
        if self.resolution < 1 or self.resolution % 2 == 0:
            raise ConfigError("grid resolution must be a positive odd integer")
        if self.eps < 0:
            raise ConfigError("grid eps must be non-negative")
        if self.dim < 1:
            raise ConfigError("grid dim must be >= 1")

    @property
    def size(self) -> int:
        return self.resolution ** self.dim

    def axis(self) -> np.ndarray:
        R = self.resolution
        if R == 1:
            return np.zeros(1)
        t = np.arange(R, dtype=np.float64)
        a = -self.eps + 2.0 * self.eps * t / (R - 1)
        a[R // 2] = 0.0
        return np.clip(a, -self.eps, self.eps)

    def points(self) -> np.ndarray:
        """All points, last coordinate varying fastest; shape ``(size, dim)``."""
        a = self.axis()
        mesh = np.meshgrid(*([a] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def zero_index(self) -> int:
        return (self.size - 1) // 2


@dataclass(frozen=True)
class OracleCaps:
    max_inputs: int = 8
    max_points: int = 51 * 51


@dataclass
class CpTable:
    """Grid record for a dataset.

    ``mask[u, i]`` is true when ``x_i + u`` is misclassified. ``kappa_star`` is
    the largest number of inputs any grid point breaks; ``kappa_u_star`` is the
    count broken by ``u_star_index``, the point of highest mean loss.
    """

    grid: PerturbationGrid
    points: np.ndarray
    mask: np.ndarray
    losses: np.ndarray
    psi_hat: np.ndarray
    kappa_star: int
    u_star_index: int
    mean_losses: np.ndarray

    @property
    def n_inputs(self) -> int:
        return self.mask.shape[1]

    @property
    def kappa_u_star(self) -> int:
        return int(self.psi_hat[self.u_star_index])

    @property
    def u_star(self) -> np.ndarray:
        return self.points[self.u_star_index]

    def psi(self, u_index: int, k: int) -> bool:
        """Whether grid point ``u_index`` breaks at least ``k`` inputs."""
        return bool(self.psi_hat[u_index] >= k)

    def cp_set(self, k: int) -> np.ndarray:
        """Grid indices of every point breaking at least ``k`` inputs."""
        return np.flatnonzero(self.psi_hat >= k)


def _fmean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def adversarial_indicator(net: Network, x, y: int, u) -> bool:
    return predict(net, np.asarray(x, dtype=np.float64) + np.asarray(u, dtype=np.float64)) != y


def build_cp_table(net: Network, X, y, grid: PerturbationGrid, caps: OracleCaps = OracleCaps(),
                   loss: Callable = margin_loss) -> CpTable:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (n,))
    if n < 1:
        raise ContractError("oracle needs at least one input")
    if n > caps.max_inputs:
        raise ContractError(f"{n} inputs exceed the oracle cap of {caps.max_inputs}")
    if grid.size > caps.max_points:
        raise ContractError(f"{grid.size} grid points exceed the oracle cap of {caps.max_points}")
    if grid.dim != X.shape[1]:
        raise ContractError(f"grid dim {grid.dim} does not match input dim {X.shape[1]}")
    P = grid.points()
    mask = np.empty((len(P), n), dtype=bool)
    losses = np.empty((len(P), n))
    for i in range(n):
        Z = X[i] + P
        mask[:, i] = predict(net, Z) != y[i]
        losses[:, i] = loss(net, Z, np.full(len(P), y[i]))
    psi_hat = mask.sum(axis=1)
    mean_losses = np.array([_fmean(row) for row in losses])
    return CpTable(grid, P, mask, losses, psi_hat, int(psi_hat.max()),
                   int(np.argmax(mean_losses)), mean_losses)


def u_star(table: CpTable) -> np.ndarray:
    """Grid point of highest mean loss; ties go to the lowest grid index."""
    return table.u_star


def expected_kcp_loss(table: CpTable, k: int) -> Optional[float]:
    """Mean over inputs of the worst loss over the ``k``-cp set; None when that set is empty."""
    idx = table.cp_set(k)
    if idx.size == 0:
        return None
    return _fmean(table.losses[idx, i].max() for i in range(table.n_inputs))


def expected_kcp_loss_rowwise(table: CpTable, k: int) -> Optional[float]:
    """Same value as :func:`expected_kcp_loss` via a grid-major loop (cross-check)."""
    best = [None] * table.n_inputs
    for u in range(len(table.points)):
        if table.psi_hat[u] < k:
            continue
        for i in range(table.n_inputs):
            v = table.losses[u, i]
            if best[i] is None or v > best[i]:
                best[i] = v
    if best[0] is None:
        return None
    return _fmean(best)


@dataclass
class ChainReport:
    holds: bool
    vacuous: bool
    kappa: int
    kappa_max: int
    lhs: float
    chain: List[float]  # E(kappa), E(kappa - 1), ..., E(1)

    def to_dict(self):
        return asdict(self)


def check_kcp_chain(table: CpTable) -> ChainReport:
    """Max mean loss <= E(kappa) <= E(kappa - 1) <= ... <= E(1), kappa counted at ``u*``."""
    kappa = table.kappa_u_star
    lhs = float(table.mean_losses[table.u_star_index])
    if kappa < 1:
        return ChainReport(True, True, kappa, table.kappa_star, lhs, [])
    chain = [expected_kcp_loss(table, k) for k in range(kappa, 0, -1)]
    ok = lhs <= chain[0] and all(a <= b for a, b in zip(chain, chain[1:]))
    return ChainReport(bool(ok), False, kappa, table.kappa_star, lhs, chain)


@dataclass
class CrossInputCase:
    index: int
    vacuous: bool
    l2cp: Optional[float] = None
    rhs: Optional[float] = None


@dataclass
class CrossInputReport:
    holds: bool
    cases: List[CrossInputCase] = field(default_factory=list)

    @property
    def n_checked(self) -> int:
        return sum(not c.vacuous for c in self.cases)

    def to_dict(self):
        return {"holds": self.holds, "n_checked": self.n_checked,
                "cases": [asdict(c) for c in self.cases]}


def check_cross_input_bound(net: Network, X, y, grid: PerturbationGrid,
                            caps: OracleCaps = OracleCaps(),
                            table: Optional[CpTable] = None) -> CrossInputReport:
    """Per input: worst loss over 2-cps that break it <= worst loss over the union of the
    other inputs' adversarial sets. Inputs no 2-cp breaks are skipped."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] < 2:
        raise ContractError("need a batch of at least 2")
    table = table or build_cp_table(net, X, y, grid, caps)
    two_cp = table.psi_hat >= 2
    cases, ok = [], True
    for a in range(table.n_inputs):
        own = two_cp & table.mask[:, a]
        if not own.any():
            cases.append(CrossInputCase(a, True))
            continue
        others = np.delete(table.mask, a, axis=1).any(axis=1)
        l2cp = float(table.losses[own, a].max())
        rhs = float(table.losses[others, a].max())
        ok &= l2cp <= rhs
        cases.append(CrossInputCase(a, False, l2cp, rhs))
    return CrossInputReport(bool(ok), cases)


def uap_threshold(net: Network, X, u) -> float:
    """Fraction of inputs whose predicted class changes under ``u``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return float(np.mean(predict(net, X + u) != predict(net, X)))


def gamma_star(net: Network, X, grid: PerturbationGrid) -> float:
    """Highest threshold over the grid."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    base = predict(net, X)
    flips = np.zeros(grid.size, dtype=np.intp)
    P = grid.points()
    for i in range(X.shape[0]):
        flips += predict(net, X[i] + P) != base[i]
    return float(flips.max() / X.shape[0])


def worst_case_uap_error(table: CpTable) -> float:
    """``kappa_star / n``, checked against the maximum row mean of the mask."""
    a = table.kappa_star / table.n_inputs
    b = float(table.mask.mean(axis=1).max())
    if a != b:
        raise ContractError(f"worst-case error disagrees: {a} vs {b}")
    return a


@dataclass
class BatchBoundReport:
    holds: bool
    batch_size: int
    z_batches: List[int]
    z_global: int
    lhs: float  # 1 - sum(Z_i) / M
    rhs: float  # 1 - Z / M

    def to_dict(self):
        return asdict(self)


def batch_kappa(net: Network, X, y, N: int, grid: PerturbationGrid,
                caps: OracleCaps = OracleCaps()):
    """``(Z per consecutive batch of N, Z on the whole set)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    M = X.shape[0]
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (M,))
    if N < 1 or M % N:
        raise ContractError(f"batch size {N} does not divide {M}")
    z = [build_cp_table(net, X[s:s + N], y[s:s + N], grid, caps).kappa_star
         for s in range(0, M, N)]
    return z, build_cp_table(net, X, y, grid, caps).kappa_star


def check_batch_average_bound(net: Network, X, y, N: int, grid: PerturbationGrid,
                              caps: OracleCaps = OracleCaps()) -> BatchBoundReport:
    """Averaging per-batch worst-case accuracies never exceeds the whole-set value."""
    z, zg = batch_kappa(net, X, y, N, grid, caps)
    M = np.atleast_2d(X).shape[0]
    lhs = 1.0 - sum(z) / M
    rhs = 1.0 - zg / M
    return BatchBoundReport(bool(lhs <= rhs), N, z, zg, lhs, rhs)


# -- fuzz campaign ----------------------------------------------------------

@dataclass
class FuzzConfig:
    instances: int = 20
    n_inputs: int = 6
    batch_n: int = 5
    partitions: Sequence[int] = (1, 2, 3)
    hidden: Sequence[int] = (8,)
    n_classes: int = 2
    eps: float = 0.3
    resolution: int = 41
    seed: int = 0
    max_tries: int = 200


def random_instance(rng: np.random.Generator, n_inputs: int, hidden=(8,), n_classes: int = 2,
                    dim: int = 2):
    """Random ReLU net and inputs labelled by the net itself (so clean-correct)."""
    sizes = [dim, *hidden, n_classes]
    layers = []
    for k in range(len(sizes) - 1):
        layers.append(Affine(rng.normal(size=(sizes[k + 1], sizes[k])) / math.sqrt(sizes[k]),
                             rng.normal(size=sizes[k + 1]) * 0.5))
        if k < len(sizes) - 2:
            layers.append(ReLU())
    net = Network(layers)
    X = rng.uniform(-1.0, 1.0, size=(n_inputs, dim))
    return net, X, predict(net, X)


def _instance_with(rng, cfg: FuzzConfig, n: int, grid: PerturbationGrid, accept):
    for _ in range(cfg.max_tries):
        net, X, y = random_instance(rng, n, cfg.hidden, cfg.n_classes)
        table = build_cp_table(net, X, y, grid)
        if accept(table):
            return net, X, y, table
    raise ContractError("could not draw a non-trivial oracle instance")


def run_fuzz(cfg: FuzzConfig = FuzzConfig()) -> Dict:
    """Inequality checks on random instances; ``report["violations"]`` must be 0."""
    rng = np.random.default_rng(cfg.seed)
    grid = PerturbationGrid(cfg.eps, cfg.resolution, 2)
    M = cfg.n_inputs
    out = {"config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
           "kcp_chain": [], "cross_input": [], "batch": [], "worst_case": [], "gamma_star": []}
    violations = 0
    for _ in range(cfg.instances):
        net, X, y, table = _instance_with(rng, cfg, M, grid, lambda t: t.kappa_u_star >= 1)
        chain = check_kcp_chain(table)
        recheck = [expected_kcp_loss_rowwise(table, k) for k in range(chain.kappa, 0, -1)]
        chain_ok = chain.holds and recheck == chain.chain
        violations += not chain_ok
        out["kcp_chain"].append({**chain.to_dict(), "recomputed_equal": recheck == chain.chain})

        try:
            out["worst_case"].append(worst_case_uap_error(table))
        except ContractError:
            violations += 1
            out["worst_case"].append(None)
        out["gamma_star"].append({"gamma_star": gamma_star(net, X, grid),
                                  "kappa_star": table.kappa_star})

        for N in cfg.partitions:
            if M % N:
                continue
            rep = check_batch_average_bound(net, X, y, N, grid)
            violations += not rep.holds
            out["batch"].append(rep.to_dict())
        rep = check_batch_average_bound(net, X, y, M, grid)
        violations += not (rep.holds and rep.lhs == rep.rhs)
        out["batch"].append(rep.to_dict())

        bnet, bX, by, btable = _instance_with(rng, cfg, cfg.batch_n, grid,
                                              lambda t: t.kappa_star >= 2)
        ci = check_cross_input_bound(bnet, bX, by, grid, table=btable)
        violations += not ci.holds
        out["cross_input"].append(ci.to_dict())
    out["violations"] = int(violations)
    out["holds"] = violations == 0
    return out
