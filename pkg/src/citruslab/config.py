"""Run configuration: a JSON document with fixed sections, strictly validated.

Unknown keys are rejected at every level. :meth:`RunConfig.to_dict` returns
every field with its default filled in, so an echoed config fully describes
the run that produced it.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

from .attacks import AttackConfig
from .data import Dataset, gen_data, load_idx, train_test_split
from .errors import ConfigError
from .oracle import FuzzConfig, OracleCaps
from .trainer import EvalConfig, TrainConfig


@dataclass
class DatasetConfig:
    kind: str = "moons"  # blobs | moons | idx-file
    size: int = 400
    test_size: int = 200
    noise: float = 0.15
    scale: float = 1.0
    seed: int = 0
    path: Optional[str] = None         # idx images
    labels_path: Optional[str] = None  # idx labels
    downsample: int = 0

    def __post_init__(self):
        if self.kind not in ("blobs", "moons", "idx-file"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "idx-file" and not (self.path and self.labels_path):
            raise ConfigError("idx-file datasets need 'path' and 'labels_path'")
        if self.size < 1 or self.test_size < 0:
            raise ConfigError("dataset sizes must be positive")

    def build(self) -> Tuple[Dataset, Dataset]:
        """``(train, test)``; synthetic sets draw ``size + test_size`` points then split."""
        if self.kind == "idx-file":
            ds = load_idx(self.path, self.labels_path, self.downsample)
            if len(ds) < self.size + self.test_size:
                raise ConfigError(f"idx file has {len(ds)} examples, "
                                  f"need {self.size + self.test_size}")
            ds = ds.subset(slice(0, self.size + self.test_size))
        else:
            ds = gen_data(self.kind, self.size + self.test_size, self.noise, self.seed,
                          self.scale)
        if self.test_size == 0:
            return ds, ds
        return train_test_split(ds, self.test_size, self.seed)


@dataclass
class CertifyConfig:
    eps: Optional[float] = None  # None: the training target
    batch_n: int = 5
    steps: int = 20
    restarts: int = 5
    exact_resolution: Optional[int] = None

    def __post_init__(self):
        if self.batch_n < 1:
            raise ConfigError("certify batch size must be >= 1")

    def eval_config(self, seed: int) -> EvalConfig:
        return EvalConfig(self.eps, self.batch_n, self.steps, self.restarts, seed)


@dataclass
class OracleConfig:
    resolution: int = 41
    max_inputs: int = 8
    max_points: int = 51 * 51
    instances: int = 20
    n_inputs: int = 6
    batch_n: int = 5
    partitions: List[int] = field(default_factory=lambda: [1, 2, 3])
    hidden: List[int] = field(default_factory=lambda: [8])
    n_classes: int = 2
    eps: float = 0.3
    seed: int = 0

    def caps(self) -> OracleCaps:
        return OracleCaps(self.max_inputs, self.max_points)

    def fuzz_config(self) -> FuzzConfig:
        if self.n_inputs > self.max_inputs or self.resolution ** 2 > self.max_points:
            raise ConfigError("oracle instance size exceeds the configured caps")
        return FuzzConfig(self.instances, self.n_inputs, self.batch_n, tuple(self.partitions),
                          tuple(self.hidden), self.n_classes, self.eps, self.resolution, self.seed)


_TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig) if f.name != "attack"]


def _strict(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {unknown}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"bad section {where!r}: {e}") from None


@dataclass
class RunConfig:
    arch: List[int] = field(default_factory=lambda: [2, 32, 32, 2])
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)

    SECTIONS = ("arch", "dataset", "train", "attack", "certify", "oracle")

    @property
    def attack(self) -> AttackConfig:
        return self.train.attack

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(d) - set(cls.SECTIONS))
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
        arch = d.get("arch", [2, 32, 32, 2])
        if not isinstance(arch, list) or len(arch) < 2 or not all(
                isinstance(a, int) and a >= 1 for a in arch):
            raise ConfigError("arch must be a list of at least two positive integers")
        train = dict(d.get("train") or {})
        unknown = sorted(set(train) - set(_TRAIN_KEYS))
        if unknown:
            raise ConfigError(f"unknown keys in 'train': {unknown}")
        attack = _strict(AttackConfig, d.get("attack"), "attack")
        try:
            train_cfg = TrainConfig(**train, attack=attack)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad section 'train': {e}") from None
        return cls(list(arch), _strict(DatasetConfig, d.get("dataset"), "dataset"), train_cfg,
                   _strict(CertifyConfig, d.get("certify"), "certify"),
                   _strict(OracleConfig, d.get("oracle"), "oracle"))

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        attack = train.pop("attack")
        return {"arch": list(self.arch), "dataset": dataclasses.asdict(self.dataset),
                "train": train, "attack": attack, "certify": dataclasses.asdict(self.certify),
                "oracle": dataclasses.asdict(self.oracle)}

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with one seed applied to data, training, attacks and the oracle."""
        d = self.to_dict()
        for sec in ("dataset", "train", "attack", "oracle"):
            d[sec]["seed"] = seed
        return RunConfig.from_dict(d)

    def eval_config(self) -> EvalConfig:
        return self.certify.eval_config(self.train.seed)

    def certify_eps(self) -> float:
        return self.train.eps_target if self.certify.eps is None else self.certify.eps


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return RunConfig.from_dict(d)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
