"""Worst-case accuracy under a single shared perturbation, evaluated per batch.

For each batch of ``N`` inputs three numbers are reported:

* a sound lower bound: the fraction of inputs individually certified, since
  no perturbation in the ball can flip a certified input;
* an upper bound: accuracy under one universal PGD perturbation;
* optionally the exact grid value ``1 - kappa_star / N`` for 2-D inputs.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .attacks import AttackConfig, pgd_universal, pgd_universal_groups
from .interval import DataRange, certify_individual
from .network import Network, predict

METRIC_LABEL = "individual-certification lower bound"


def certified_uap_lower_bound(net: Network, X, y, eps: float, data_range: DataRange = None) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return float(np.mean(certify_individual(net, X, y, eps, data_range)))


def attacked_uap_upper_bound(net: Network, X, y, eps: float, atk: AttackConfig, rng=None,
                             data_range: DataRange = None) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.broadcast_to(np.asarray(y), (X.shape[0],))
    u = pgd_universal(net, X, y, atk, rng, data_range, eps=eps)
    return float(np.mean(predict(net, X + u) == y))


def _groups(n: int, N: int) -> np.ndarray:
    return np.arange(n) // N


def certified_average_uap_accuracy(net: Network, X, y, eps: float, N: int = 5,
                                   data_range: DataRange = None) -> float:
    """Mean of per-batch certified fractions over consecutive batches of ``N``
    (a shorter final batch counts with its own size)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ok = certify_individual(net, X, y, eps, data_range).astype(np.float64)
    g = _groups(len(ok), N)
    per = np.bincount(g, weights=ok) / np.bincount(g)
    return float(per.mean())


def attacked_average_uap_accuracy(net: Network, X, y, eps: float, atk: AttackConfig, N: int = 5,
                                  rng=None, data_range: DataRange = None) -> float:
    """Mean over batches of accuracy under each batch's own universal perturbation."""
    return float(np.mean(_attacked_per_batch(net, X, y, eps, atk, N, rng, data_range)))


def _attacked_per_batch(net, X, y, eps, atk, N, rng, data_range):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (X.shape[0],))
    g = _groups(X.shape[0], N)
    U = pgd_universal_groups(net, X, y, g, eps, atk, rng, data_range)
    hit = (predict(net, X + U[g]) == y).astype(np.float64)
    return np.bincount(g, weights=hit) / np.bincount(g)


@dataclass
class BatchCert:
    index: int
    size: int
    certified_count: int
    certified_lower: float
    attacked_upper: float
    exact: Optional[float] = None


@dataclass
class CertReport:
    batch_size: int
    eps: float
    batches: List[BatchCert] = field(default_factory=list)
    ucert_lb: float = 0.0
    attack_ub: float = 0.0
    exact_mean: Optional[float] = None
    metric: str = METRIC_LABEL

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["batch", "size", "certified_count", "certified_lower", "attacked_upper", "exact"])
        for b in self.batches:
            w.writerow([b.index, b.size, b.certified_count, repr(b.certified_lower),
                        repr(b.attacked_upper), "" if b.exact is None else repr(b.exact)])
        return buf.getvalue()


def certify_dataset(net: Network, X, y, eps: float, N: int = 5, atk: Optional[AttackConfig] = None,
                    rng=None, data_range: DataRange = None, exact_resolution: Optional[int] = None
                    ) -> CertReport:
    """Per-batch lower/upper bounds and, for 2-D inputs, exact grid values."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (X.shape[0],))
    atk = atk or AttackConfig(restarts=5)
    ok = certify_individual(net, X, y, eps, data_range)
    upper = _attacked_per_batch(net, X, y, eps, atk, N, rng, data_range)
    grid = None
    if exact_resolution is not None:
        from .oracle import OracleCaps, PerturbationGrid, build_cp_table
        grid = PerturbationGrid(eps, exact_resolution, X.shape[1])
        caps = OracleCaps(max_inputs=max(N, 8), max_points=max(grid.size, 51 * 51))
    rep = CertReport(N, float(eps))
    for k, s in enumerate(range(0, X.shape[0], N)):
        n = min(N, X.shape[0] - s)
        c = int(ok[s:s + n].sum())
        exact = None
        if grid is not None:
            table = build_cp_table(net, X[s:s + n], y[s:s + n], grid, caps)
            exact = 1.0 - table.kappa_star / n
        rep.batches.append(BatchCert(k, n, c, c / n, float(upper[k]), exact))
    rep.ucert_lb = float(np.mean([b.certified_lower for b in rep.batches]))
    rep.attack_ub = float(np.mean([b.attacked_upper for b in rep.batches]))
    if grid is not None:
        rep.exact_mean = float(np.mean([b.exact for b in rep.batches]))
    return rep
