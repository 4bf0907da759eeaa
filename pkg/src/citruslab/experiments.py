"""Multi-seed method comparisons and tau-ratio sweeps on the toy tasks."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .config import RunConfig
from .losses import LossKind
from .trainer import MetricsRecord, train


@dataclass
class RunResult:
    method: str
    seed: int
    tau_ratio: float
    clean_acc: float
    ucert_lb: float
    attack_acc: float
    cert_ind_acc: float
    si_loss_mean: float
    ci_term_means: List[float] = field(default_factory=list)
    wall_s: float = 0.0

    def to_dict(self):
        return dataclasses.asdict(self)


def variant(cfg: RunConfig, method: Optional[str] = None, seed: Optional[int] = None,
            tau_ratio: Optional[float] = None) -> RunConfig:
    d = cfg.to_dict()
    if method is not None:
        d["train"]["loss_kind"] = LossKind(method).value
    if tau_ratio is not None:
        d["train"]["tau_ratio"] = tau_ratio
    out = RunConfig.from_dict(d)
    return out.with_seed(seed) if seed is not None else out


def run_one(cfg: RunConfig):
    """Build the data, train, and return ``(net, history)``."""
    tr, te = cfg.dataset.build()
    return train(cfg.train, tr, cfg.arch, test=te, eval_cfg=cfg.eval_config())


def _result(cfg: RunConfig, history: List[MetricsRecord]) -> RunResult:
    last = history[-1]
    return RunResult(cfg.train.loss_kind.value, cfg.train.seed, cfg.train.tau_ratio,
                     last.clean_acc, last.ucert_lb, last.attack_acc, last.cert_ind_acc,
                     last.si_loss_mean, list(last.ci_term_means),
                     float(sum(r.wall_s for r in history)))


def _summary(results: List[RunResult]) -> Dict:
    keys = ("clean_acc", "ucert_lb", "attack_acc", "cert_ind_acc")
    return {k: float(np.mean([getattr(r, k) for r in results])) for k in keys}


def compare_methods(cfg: RunConfig, methods: Sequence[str], seeds: Sequence[int]) -> Dict:
    """Final-epoch metrics per method, averaged over seeds."""
    out = {}
    for m in methods:
        runs = [_result(c, run_one(c)[1]) for c in (variant(cfg, m, s) for s in seeds)]
        out[LossKind(m).value] = {**_summary(runs), "runs": [r.to_dict() for r in runs]}
    return out


def spearman(x, y) -> float:
    """Rank correlation; 0 when either side is constant."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(spearmanr(x, y).statistic)


def tau_ablation(cfg: RunConfig, ratios: Sequence[float], seeds: Sequence[int],
                 method: str = "citrus") -> Dict:
    """Seed-averaged metrics per tau ratio plus rank correlations with the ratio."""
    rows = {}
    for r in ratios:
        runs = [_result(c, run_one(c)[1]) for c in (variant(cfg, method, s, r) for s in seeds)]
        rows[r] = {**_summary(runs), "runs": [x.to_dict() for x in runs]}
    clean = [rows[r]["clean_acc"] for r in ratios]
    cert = [rows[r]["ucert_lb"] for r in ratios]
    return {"method": LossKind(method).value, "ratios": list(ratios),
            "by_ratio": {str(r): rows[r] for r in ratios},
            "spearman_clean": spearman(ratios, clean), "spearman_cert": spearman(ratios, cert)}
