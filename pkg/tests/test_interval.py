import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from citruslab import kernels
from citruslab.errors import ContractError, DimensionError
from citruslab.interval import (IntervalTensor, certify_individual, ibp_loss, ibp_loss_grad,
                                input_box, margin_bounds, naive_margin_bounds, propagate_box)
from citruslab.network import Affine, Network, ReLU, forward, predict
from conftest import random_net
from gradcheck import fd_grads, random_case, rel_err


def test_interval_invariants():
    with pytest.raises(ContractError):
        IntervalTensor([1.0], [0.0])
    with pytest.raises(DimensionError):
        IntervalTensor([0.0], [0.0, 1.0])
    box = IntervalTensor.from_center_radius([1.0, 2.0], 0.5)
    assert np.array_equal(box.lower, [0.5, 1.5]) and np.array_equal(box.radius, [0.5, 0.5])
    with pytest.raises(ContractError):
        IntervalTensor.from_center_radius([0.0], -1.0)


def test_affine_box_example():
    net = Network([Affine(np.array([[1.0, -1.0]]), np.zeros(1))])
    out = propagate_box(net, IntervalTensor.from_center_radius([0.0, 0.0], [1.0, 1.0]))
    assert out.lower[0] == -2.0 and out.upper[0] == 2.0


def test_relu_box_example():
    net = Network([Affine(np.eye(1), np.zeros(1)), ReLU(), Affine(np.eye(1), np.zeros(1))])
    out = propagate_box(net, IntervalTensor([-1.0], [2.0]))
    assert out.lower[0] == 0.0 and out.upper[0] == 2.0


def test_monte_carlo_containment(rng):
    for _ in range(5):
        net = random_net(rng, [2, 8, 8, 2])
        x = rng.normal(size=2)
        box = input_box(x, 0.1)
        out = propagate_box(net, box)
        pts = rng.uniform(box.lower, box.upper, size=(10000, 2))
        logits = forward(net, pts)
        assert np.all(logits >= out.lower) and np.all(logits <= out.upper)
        y = int(rng.integers(0, 2))
        m = margin_bounds(net, box, y)
        assert np.all(logits - logits[:, [y]] <= m)


def test_degenerate_box_reproduces_forward(rng):
    for name in kernels.available():
        with kernels.using(name):
            net = random_net(rng, [3, 7, 5, 4])
            x = rng.normal(size=3)
            out = propagate_box(net, IntervalTensor(x, x))
            f = forward(net, x)
            assert np.array_equal(out.lower, f) and np.array_equal(out.upper, f)


def test_margin_exact_on_point_box(rng):
    net = random_net(rng, [2, 6, 3])
    x = rng.normal(size=2)
    y = predict(net, x)
    m = margin_bounds(net, IntervalTensor(x, x), y)
    o = forward(net, x)
    assert m[y] == 0.0
    assert np.allclose(m, o - o[y], atol=1e-14)


def test_identity_net_margin():
    net = Network([Affine(np.eye(2), np.zeros(2))])
    x, r = np.array([0.3, 0.7]), 0.05
    m = margin_bounds(net, input_box(x, r), 1)
    assert math.isclose(m[0], (0.3 - 0.7) + 2 * r, abs_tol=1e-15) and m[1] == 0.0


def test_elision_never_looser(rng):
    for _ in range(100):
        net = random_net(rng, [2, 8, 3])
        box = input_box(rng.normal(size=2), rng.uniform(0, 0.5))
        y = int(rng.integers(0, 3))
        assert np.all(margin_bounds(net, box, y) <= naive_margin_bounds(net, box, y) + 1e-12)


def test_margin_requires_affine_last():
    net = Network([Affine(np.eye(2), np.zeros(2))])
    net.layers.append(ReLU())
    with pytest.raises(ContractError):
        margin_bounds(net, input_box(np.zeros(2), 0.1), 0)


def test_ibp_loss_formula_values():
    # margins of -20 for each wrong class
    K = 4
    W = np.zeros((K, 1))
    b = np.full(K, -20.0)
    b[0] = 0.0
    net = Network([Affine(W, b)])
    val = ibp_loss(net, np.zeros(1), 0, 0.0)
    # log(1 + 6e-9) loses about eight digits to the "1 +", hence the loose tolerance
    assert math.isclose(val, math.log1p((K - 1) * math.exp(-20)), rel_tol=1e-6)
    assert math.isclose(val, (K - 1) * math.exp(-20), rel_tol=1e-6)
    sym = Network([Affine(np.zeros((2, 1)), np.zeros(2))])
    assert math.isclose(ibp_loss(sym, np.zeros(1), 0, 0.3), math.log(2.0), rel_tol=1e-15)


def test_ibp_loss_at_zero_radius_is_cross_entropy(rng):
    net = random_net(rng, [2, 8, 3])
    x = rng.normal(size=2)
    o = forward(net, x)
    ce = np.log(np.exp(o).sum()) - o[1]
    assert math.isclose(ibp_loss(net, x, 1, 0.0), ce, rel_tol=1e-12)


def test_ibp_gradient_finite_difference(rng):
    for _ in range(5):
        net, X, y, eps = random_case(rng, "ibp")
        _, grads = ibp_loss_grad(net, X, y, eps)
        for a, b in zip(grads, fd_grads(net, "ibp", X, y, eps)):
            assert rel_err(a, b).max() < 1e-6


@given(seed=st.integers(0, 2**16), e1=st.floats(0, 0.5), e2=st.floats(0, 0.5))
def test_monotone_in_eps(seed, e1, e2):
    e1, e2 = min(e1, e2), max(e1, e2)
    rng = np.random.default_rng(seed)
    net = random_net(rng, [2, 6, 3])
    x = rng.normal(size=2)
    y = int(rng.integers(0, 3))
    assert ibp_loss(net, x, y, e1) <= ibp_loss(net, x, y, e2) + 1e-12
    if certify_individual(net, x, y, e2):
        assert certify_individual(net, x, y, e1)


def test_certify_examples(rng):
    net = random_net(rng, [2, 8, 2])
    X = rng.normal(size=(20, 2))
    p = predict(net, X)
    assert np.all(certify_individual(net, X, p, 0.0))
    assert not np.any(certify_individual(net, X, 1 - p, 0.0))
    assert certify_individual(net, X[0], p[0], 0.0) is True


def test_certified_points_survive_grid_attack(rng):
    net = random_net(rng, [2, 16, 2], scale=2.0)
    eps = 0.05
    g = np.linspace(-eps, eps, 41)
    P = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    X = rng.uniform(-1, 1, size=(100, 2))
    y = predict(net, X)
    ok = certify_individual(net, X, y, eps)
    assert ok.any()
    for x, t in zip(X[ok], y[ok]):
        assert np.all(predict(net, x + P) == t)


def test_data_range_clips_box():
    box = input_box(np.array([0.02, 0.5, 0.99]), 0.05, (0.0, 1.0))
    assert np.allclose(box.lower, [0.0, 0.45, 0.94]) and np.allclose(box.upper, [0.07, 0.55, 1.0])
