import json

import pytest

from citruslab.config import RunConfig, dump_config, load_config
from citruslab.errors import ConfigError
from citruslab.losses import LossKind


def test_defaults_materialized(tmp_path):
    cfg = RunConfig.from_dict({})
    d = cfg.to_dict()
    assert set(d) == {"arch", "dataset", "train", "attack", "certify", "oracle"}
    assert d["train"]["batch_size"] == 5 and d["train"]["tau_ratio"] == 0.5
    assert d["attack"]["steps"] == 20
    assert d["train"]["loss_kind"] == "citrus"
    dump_config(cfg, tmp_path / "c.json")
    echoed = json.loads((tmp_path / "c.json").read_text())
    assert echoed == json.loads(json.dumps(d))
    assert load_config(tmp_path / "c.json").to_dict() == d


def test_partial_sections_override():
    cfg = RunConfig.from_dict({"arch": [2, 8, 2], "train": {"epochs": 3, "loss_kind": "ibp"},
                               "attack": {"restarts": 2}, "dataset": {"kind": "blobs"}})
    assert cfg.arch == [2, 8, 2] and cfg.train.epochs == 3
    assert cfg.train.loss_kind is LossKind.IBP and cfg.attack.restarts == 2
    assert cfg.dataset.kind == "blobs" and cfg.dataset.size == 400


@pytest.mark.parametrize("doc", [
    {"extra": 1},
    {"train": {"epochz": 3}},
    {"attack": {"step": 3}},
    {"dataset": {"kind": "moons", "colour": "red"}},
    {"certify": {"N": 5}},
    {"oracle": {"grid": 41}},
    {"arch": [2]},
    {"arch": "2-32-2"},
    {"dataset": {"kind": "cifar"}},
    {"dataset": {"kind": "idx-file"}},
    {"train": {"batch_size": 1}},
    {"train": {"loss_kind": "taps"}},
    {"attack": {"steps": 0}},
    {"dataset": []},
])
def test_rejected(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_invalid_json(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")


def test_with_seed():
    cfg = RunConfig.from_dict({}).with_seed(9)
    assert cfg.dataset.seed == cfg.train.seed == cfg.attack.seed == cfg.oracle.seed == 9


def test_oracle_caps_enforced():
    cfg = RunConfig.from_dict({"oracle": {"n_inputs": 9}})
    with pytest.raises(ConfigError):
        cfg.oracle.fuzz_config()
    assert RunConfig.from_dict({}).oracle.fuzz_config().resolution == 41


def test_build_split_sizes():
    tr, te = RunConfig.from_dict({"dataset": {"size": 30, "test_size": 10}}).dataset.build()
    assert len(tr) == 30 and len(te) == 10
