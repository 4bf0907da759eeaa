"""Certified training loop with eps/tau scheduling, Adam, and per-epoch metrics."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .attacks import AttackConfig
from .certify import attacked_average_uap_accuracy, certified_average_uap_accuracy
from .data import Dataset
from .errors import ConfigError, TrainingError
from .interval import (IntervalTensor, certify_individual, ibp_loss_graph, input_box,
                       output_radius_graph)
from .losses import LossKind, LossResult, LossSpec, batch_loss, normalizer
from .network import Affine, Network, ReLU, predict

# Weight std is INIT_GAIN / fan_in: keeps box radii from growing with depth.
INIT_GAIN = math.sqrt(2.0 * math.pi)


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 5
    eps_target: float = 0.1
    tau_ratio: float = 0.5
    lr: float = 5e-3
    warmup_epochs: int = 5
    ramp_epochs: int = 20
    seed: int = 0
    loss_kind: LossKind = LossKind.CITRUS
    attack: AttackConfig = field(default_factory=AttackConfig)
    width_penalty: float = 0.0
    grad_clip: float = 10.0
    grad_backend: str = "kernel"  # or "autograd"

    def __post_init__(self):
        self.loss_kind = LossKind(self.loss_kind)
        if isinstance(self.attack, dict):
            self.attack = AttackConfig(**self.attack)
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.loss_kind is LossKind.CITRUS and self.batch_size < 2:
            raise ConfigError("cross-input training needs batch size >= 2")
        if not 0.0 < self.tau_ratio <= 1.0:
            raise ConfigError("tau ratio must lie in (0, 1]")
        if self.eps_target < 0 or self.lr <= 0:
            raise ConfigError("eps must be >= 0 and lr > 0")
        if self.warmup_epochs < 0 or self.ramp_epochs < 0:
            raise ConfigError("warmup and ramp lengths must be >= 0")
        if self.width_penalty < 0 or self.grad_clip <= 0:
            raise ConfigError("width penalty must be >= 0 and grad clip > 0")
        if self.grad_backend not in ("kernel", "autograd"):
            raise ConfigError(f"unknown gradient backend {self.grad_backend!r}")

    def to_dict(self):
        d = asdict(self)
        d["loss_kind"] = self.loss_kind.value
        return d


@dataclass
class EvalConfig:
    """How each epoch's metrics are measured (on the test set when given)."""

    eps: Optional[float] = None  # None: the training target
    batch_n: int = 5
    steps: int = 20
    restarts: int = 5
    seed: int = 0


@dataclass
class MetricsRecord:
    epoch: int
    loss: float
    clean_acc: float
    attack_acc: float
    cert_ind_acc: float
    ucert_lb: float
    ci_loss_mean: float
    si_loss_mean: float
    wall_s: float
    ci_term_means: List[float] = field(default_factory=list)  # by offset j - i (mod m)
    eps: float = 0.0
    tau: float = 0.0
    ibp_terms: int = 0

    CSV_FIELDS = ("epoch", "loss", "clean_acc", "attack_acc", "cert_ind_acc", "ucert_lb",
                  "ci_loss_mean", "si_loss_mean", "wall_s")

    def csv_row(self):
        return [self.epoch] + [repr(float(getattr(self, k))) for k in self.CSV_FIELDS[1:]]

    def to_dict(self):
        return asdict(self)


def eps_schedule(epoch: float, cfg: TrainConfig) -> Tuple[float, float]:
    """``(eps, tau)``: 0 during warmup, then a linear ramp to the target, then flat.

    Fractional epochs are accepted so the ramp can advance per batch.
    """
    if epoch < cfg.warmup_epochs:
        eps = 0.0
    elif cfg.ramp_epochs == 0 or epoch >= cfg.warmup_epochs + cfg.ramp_epochs:
        eps = cfg.eps_target
    else:
        eps = cfg.eps_target * (epoch - cfg.warmup_epochs) / cfg.ramp_epochs
    return eps, cfg.tau_ratio * eps


def init_weights(arch: Sequence[int], seed: int) -> Network:
    """ReLU MLP with weights ``N(0, (INIT_GAIN / fan_in)^2)`` and zero biases."""
    if len(arch) < 2 or any(int(a) < 1 for a in arch):
        raise ConfigError(f"invalid architecture {list(arch)}")
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(len(arch) - 1):
        fan_in = arch[k]
        W = rng.normal(0.0, INIT_GAIN / fan_in, size=(arch[k + 1], fan_in))
        layers.append(Affine(W, np.zeros(arch[k + 1])))
        if k < len(arch) - 2:
            layers.append(ReLU())
    return Network(layers)


class Adam:
    """Adam with global gradient-norm clipping; updates arrays in place."""

    def __init__(self, params: List[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip: Optional[float] = 10.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.clip = lr, beta1, beta2, eps, clip
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: List[np.ndarray]) -> float:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        scale = self.clip / norm if self.clip is not None and norm > self.clip else 1.0
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm


def _autograd_grads(net: Network, res: LossResult, scale: float) -> List[np.ndarray]:
    g = ag.Graph()
    params = ag.bind(g, net)
    L, U, y = res.rows
    loss = ag.vsum(ibp_loss_graph(net, params, IntervalTensor(L, U), y)) * scale
    return g.backward(loss)


def _width_penalty(net: Network, X, eps: float, weight: float, data_range):
    """``weight * mean_n sum_k 2 r_k`` of the output box over ``B(x, eps)`` and its gradients."""
    g = ag.Graph()
    params = ag.bind(g, net)
    r = output_radius_graph(net, params, input_box(X, eps, data_range))
    pen = ag.vsum(r) * (2.0 * weight / X.shape[0])
    grads = g.backward(pen)
    return float(pen.value), grads


def evaluate(net: Network, data: Dataset, eps: float, ev: EvalConfig) -> dict:
    X, y = data.inputs, data.labels
    atk = AttackConfig(steps=ev.steps, restarts=ev.restarts, seed=ev.seed)
    rng = np.random.default_rng(ev.seed)
    return {
        "clean_acc": float(np.mean(predict(net, X) == y)),
        "attack_acc": attacked_average_uap_accuracy(net, X, y, eps, atk, ev.batch_n, rng,
                                                    data.data_range),
        "cert_ind_acc": float(np.mean(certify_individual(net, X, y, eps, data.data_range))),
        "ucert_lb": certified_average_uap_accuracy(net, X, y, eps, ev.batch_n, data.data_range),
    }


def train(cfg: TrainConfig, data: Dataset, arch: Optional[Sequence[int]] = None,
          test: Optional[Dataset] = None, eval_cfg: Optional[EvalConfig] = None,
          net: Optional[Network] = None,
          on_epoch: Optional[Callable[[MetricsRecord], None]] = None
          ) -> Tuple[Network, List[MetricsRecord]]:
    """Train ``net`` (or a freshly initialized ``arch`` MLP) and return it with one
    :class:`MetricsRecord` per epoch. Deterministic for a given ``cfg.seed``."""
    if len(data) == 0:
        raise ConfigError("empty training set")
    if net is None:
        arch = list(arch) if arch is not None else [data.dim, 32, 32, data.n_classes]
        net = init_weights(arch, cfg.seed)
    ev = eval_cfg or EvalConfig(seed=cfg.seed)
    eval_eps = cfg.eps_target if ev.eps is None else ev.eps
    eval_data = test if test is not None else data
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.parameters(), cfg.lr, clip=cfg.grad_clip)
    m = cfg.batch_size
    n = len(data)
    n_batches = n // m if cfg.loss_kind is LossKind.CITRUS else math.ceil(n / m)
    if n_batches == 0:
        raise ConfigError(f"training set of {n} cannot fill a batch of {m}")
    cross = cfg.loss_kind in (LossKind.CITRUS, LossKind.CITRUS_SI)
    history: List[MetricsRecord] = []

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses, ibp_terms = [], 0
        ci_sum = np.zeros(m)
        ci_cnt = np.zeros(m)
        si_vals: List[float] = []
        for b in range(n_batches):
            idx = order[b * m:(b + 1) * m]
            X, y = data.inputs[idx], data.labels[idx]
            eps, tau = eps_schedule(epoch + b / n_batches, cfg)
            spec = LossSpec(cfg.loss_kind, eps, tau)
            res = batch_loss(spec, net, X, y, cfg.attack, rng, grad=cfg.grad_backend == "kernel",
                             data_range=data.data_range)
            scale = 1.0 / normalizer(cfg.loss_kind, len(idx))
            loss = res.value * scale
            if cfg.grad_backend == "kernel":
                grads = [g * scale for g in res.grads]
            else:
                grads = _autograd_grads(net, res, scale)
            if cfg.width_penalty > 0:
                pen, pg = _width_penalty(net, X, eps, cfg.width_penalty, data.data_range)
                loss += pen
                grads = [a + c for a, c in zip(grads, pg)]
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(f"non-finite loss or gradient at epoch {epoch}, batch {b} "
                                    f"(eps={eps}, tau={tau}, loss={loss})")
            opt.step(grads)
            losses.append(loss)
            ibp_terms += res.n_ibp_terms
            if cross:
                k = len(idx)
                T = res.terms
                for off in range(1, k):
                    ci_sum[off] += T[np.arange(k), (np.arange(k) + off) % k].sum()
                    ci_cnt[off] += k
                if cfg.loss_kind is LossKind.CITRUS_SI:
                    si_vals.extend(np.diag(T))
        metrics = evaluate(net, eval_data, eval_eps, ev)
        ci_means = [float(ci_sum[o] / ci_cnt[o]) for o in range(1, m) if ci_cnt[o] > 0]
        ci_all = float(ci_sum.sum() / ci_cnt.sum()) if ci_cnt.sum() > 0 else float("nan")
        rec = MetricsRecord(
            epoch=epoch,
            loss=float(np.mean(losses)),
            ci_loss_mean=ci_all,
            si_loss_mean=float(np.mean(si_vals)) if si_vals else float("nan"),
            wall_s=time.perf_counter() - t0,
            ci_term_means=ci_means,
            eps=eps,
            tau=tau,
            ibp_terms=ibp_terms,
            **metrics,
        )
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return net, history
