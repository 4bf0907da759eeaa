import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from citruslab.attacks import AttackConfig
from citruslab.certify import (METRIC_LABEL, attacked_average_uap_accuracy, attacked_uap_upper_bound,
                               certified_average_uap_accuracy, certified_uap_lower_bound,
                               certify_dataset)
from citruslab.data import gen_data
from citruslab.network import Affine, Network, predict
from citruslab.oracle import PerturbationGrid, build_cp_table, random_instance
from citruslab.trainer import init_weights

ATK = AttackConfig(restarts=5)
HALF = Network([Affine(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))])


def test_zero_eps_examples():
    rng = np.random.default_rng(0)
    net, X, y = random_instance(rng, 7)
    assert certified_uap_lower_bound(net, X, y, 0.0) == 1.0
    assert certified_average_uap_accuracy(net, X, y, 0.0, N=3) == 1.0
    assert attacked_uap_upper_bound(net, X, y, 0.0, ATK) == 1.0
    wrong = 1 - y
    assert attacked_uap_upper_bound(net, X, wrong, 0.0, ATK) == 0.0


def test_nothing_certified_and_fragile():
    X = np.array([[0.01, 0.0], [0.02, 0.0], [0.03, 0.0]])
    y = predict(HALF, X)
    assert certified_uap_lower_bound(HALF, X, y, 0.5) == 0.0
    assert attacked_uap_upper_bound(HALF, X, y, 0.5, ATK) == 0.0


def test_remainder_batch_counts_with_own_size():
    X = np.array([[0.01, 0.0], [0.9, 0.0], [0.9, 0.1], [0.01, 0.1], [0.8, 0.0]])
    y = predict(HALF, X)
    # batches {lo, hi}, {hi, lo}, {hi}: certified fractions 1/2, 1/2, 1
    assert certified_average_uap_accuracy(HALF, X, y, 0.1, N=2) == pytest.approx(2 / 3)
    rep = certify_dataset(HALF, X, y, 0.1, N=2, atk=ATK)
    assert [b.size for b in rep.batches] == [2, 2, 1]


def test_untrained_net_is_barely_certified():
    data = gen_data("moons", 200, 0.1, 0)
    net = init_weights([2, 32, 32, 2], 0)
    assert certified_average_uap_accuracy(net, data.inputs, data.labels, 0.1) <= 0.1


def test_sandwich_against_grid():
    rng = np.random.default_rng(11)
    eps = 0.3
    grid = PerturbationGrid(eps, 41)
    for trial in range(30):
        net, X, y = random_instance(rng, 5)
        lo = certified_uap_lower_bound(net, X, y, eps)
        exact = 1.0 - build_cp_table(net, X, y, grid).kappa_star / 5
        hi = attacked_uap_upper_bound(net, X, y, eps, ATK, rng=np.random.default_rng(trial))
        assert lo <= exact <= hi


@given(seed=st.integers(0, 2**16))
def test_monotone_in_eps(seed):
    rng = np.random.default_rng(seed)
    net, X, y = random_instance(rng, 8)
    vals = [certified_average_uap_accuracy(net, X, y, e, N=4) for e in (0.0, 0.05, 0.1, 0.2, 0.4)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_batch_averaging_not_above_single_batch():
    rng = np.random.default_rng(2)
    for _ in range(10):
        net, X, y = random_instance(rng, 6)
        split = certify_dataset(net, X, y, 0.3, N=2, atk=ATK, exact_resolution=21)
        whole = certify_dataset(net, X, y, 0.3, N=6, atk=ATK, exact_resolution=21)
        assert split.exact_mean <= whole.exact_mean + 1e-12


def test_grouped_attack_average():
    rng = np.random.default_rng(4)
    net, X, y = random_instance(rng, 6)
    avg = attacked_average_uap_accuracy(net, X, y, 0.3, ATK, N=3)
    assert 0.0 <= avg <= 1.0
    assert avg >= certified_average_uap_accuracy(net, X, y, 0.3, N=3)


def test_report_serialization():
    rng = np.random.default_rng(5)
    net, X, y = random_instance(rng, 7)
    rep = certify_dataset(net, X, y, 0.2, N=3, atk=ATK, exact_resolution=21)
    d = json.loads(rep.to_json())
    assert d["metric"] == METRIC_LABEL and d["batch_size"] == 3 and len(d["batches"]) == 3
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["batch", "size", "certified_count", "certified_lower", "attacked_upper", "exact"]
    assert len(rows) == 4
    for b in rep.batches:
        assert b.certified_lower <= b.exact <= b.attacked_upper
    assert rep.ucert_lb == pytest.approx(np.mean([b.certified_lower for b in rep.batches]))
    plain = certify_dataset(net, X, y, 0.2, N=3, atk=ATK)
    assert plain.exact_mean is None and list(csv.reader(io.StringIO(plain.to_csv())))[1][-1] == ""
