import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from citruslab import kernels
from citruslab.attacks import AttackConfig, pgd_batch, pgd_single
from citruslab.errors import ContractError
from citruslab.interval import certify_individual, ibp_loss
from citruslab.losses import (LossKind, LossSpec, batch_loss, citrus_loss, citrus_si_loss,
                              clean_loss, cross_entropy, ibp_batch_loss, margin_loss, normalizer,
                              sabr_loss)
from citruslab.network import Affine, Network, predict
from conftest import random_net

ATK = AttackConfig(steps=10, seed=0)


def two_logit_net(o):
    return Network([Affine(np.zeros((len(o), 1)), np.asarray(o, dtype=float))])


def test_spec_validation():
    with pytest.raises(ContractError):
        LossSpec(LossKind.SABR, eps=0.1, tau=0.2)
    with pytest.raises(ContractError):
        LossSpec("citrus", eps=0.1, tau=-0.1)
    assert LossSpec("citrus", 0.1, 0.05).kind is LossKind.CITRUS


def test_margin_loss_examples():
    assert margin_loss(two_logit_net([1.0, 3.0]), np.zeros(1), 1) == -2.0
    assert margin_loss(two_logit_net([2.0, 2.0]), np.zeros(1), 0) == 0.0


def test_margin_sign_matches_prediction_on_grid(rng):
    net = random_net(rng, [2, 16, 3])
    g = np.linspace(-2, 2, 81)
    P = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    for y in range(3):
        m = margin_loss(net, P, np.full(len(P), y))
        assert np.array_equal(m > 0, predict(net, P) != y)
        assert np.array_equal(m <= 0, certify_individual(net, P, np.full(len(P), y), 0.0))


def test_clean_loss_is_cross_entropy(rng):
    net = random_net(rng, [2, 8, 3])
    X = rng.normal(size=(6, 2))
    y = rng.integers(0, 3, size=6)
    res = clean_loss(net, X, y)
    assert np.allclose(res.terms, cross_entropy(net, X, y), atol=1e-13)
    assert res.n_ibp_terms == 0


def test_sabr_with_tau_equal_eps_is_ibp(rng):
    net = random_net(rng, [2, 8, 2])
    X = rng.normal(size=(4, 2))
    y = predict(net, X)
    a = sabr_loss(net, X, y, 0.1, 0.1, ATK)
    b = ibp_batch_loss(net, X, y, 0.1)
    assert a.terms.tobytes() == b.terms.tobytes()
    assert a.terms.tobytes() == np.array([ibp_loss(net, x, t, 0.1) for x, t in zip(X, y)]).tobytes()


def test_sabr_at_zero_eps_is_cross_entropy(rng):
    net = random_net(rng, [2, 8, 2])
    X = rng.normal(size=(4, 2))
    y = predict(net, X)
    assert np.allclose(sabr_loss(net, X, y, 0.0, 0.0, ATK).terms, cross_entropy(net, X, y), atol=1e-13)


def test_sabr_composes_attack_and_ibp(rng):
    net = random_net(rng, [2, 8, 2])
    x = rng.normal(size=2)
    y = int(predict(net, x))
    got = sabr_loss(net, x, y, 0.2, 0.05, ATK, rng=np.random.default_rng(3)).value
    v = pgd_single(net, x, y, ATK, rng=np.random.default_rng(3), eps=0.15)
    assert math.isclose(got, ibp_loss(net, x + v, y, 0.05), rel_tol=1e-13)


def test_citrus_batch_of_two(rng):
    net = random_net(rng, [2, 8, 2])
    X = rng.normal(size=(2, 2))
    y = predict(net, X)
    res = citrus_loss(net, X, y, 0.2, 0.1, ATK, rng=np.random.default_rng(1))
    V = pgd_batch(net, X, y, 0.1, ATK, rng=np.random.default_rng(1))
    want = ibp_loss(net, X[0] + V[1], y[0], 0.1) + ibp_loss(net, X[1] + V[0], y[1], 0.1)
    assert math.isclose(res.value, want, rel_tol=1e-13)


def test_citrus_zero_attack_radius(rng):
    net = random_net(rng, [2, 8, 2])
    X = rng.normal(size=(4, 2))
    y = predict(net, X)
    res = citrus_loss(net, X, y, 0.1, 0.1, ATK)
    want = sum(3 * ibp_loss(net, x, t, 0.1) for x, t in zip(X, y))
    assert math.isclose(res.value, want, rel_tol=1e-13)


def test_citrus_recomposition_batch_of_five(rng):
    net = random_net(rng, [2, 8, 2])
    X = rng.normal(size=(5, 2))
    y = predict(net, X)
    res = citrus_loss(net, X, y, 0.2, 0.1, ATK, rng=np.random.default_rng(9))
    V = pgd_batch(net, X, y, 0.1, ATK, rng=np.random.default_rng(9))
    assert res.n_ibp_terms == 20
    for i in range(5):
        assert np.isnan(res.terms[i, i])
        for j in range(5):
            if i != j:
                assert res.terms[i, j] == ibp_loss(net, X[i] + V[j], y[i], 0.1)


def test_si_variant(rng):
    net = random_net(rng, [2, 8, 2])
    X = rng.normal(size=(2, 2))
    y = predict(net, X)
    si = citrus_si_loss(net, X, y, 0.2, 0.1, ATK, rng=np.random.default_rng(2))
    ci = citrus_loss(net, X, y, 0.2, 0.1, ATK, rng=np.random.default_rng(2))
    V = pgd_batch(net, X, y, 0.1, ATK, rng=np.random.default_rng(2))
    extra = ibp_loss(net, X[0] + V[0], y[0], 0.1) + ibp_loss(net, X[1] + V[1], y[1], 0.1)
    assert math.isclose(si.value, ci.value + extra, rel_tol=1e-13)
    one = citrus_si_loss(net, X[:1], y[:1], 0.2, 0.1, ATK, rng=np.random.default_rng(4))
    sabr = sabr_loss(net, X[:1], y[:1], 0.2, 0.1, ATK, rng=np.random.default_rng(4))
    assert one.value == sabr.value


@given(m=st.integers(2, 7))
def test_term_counts(m):
    rng = np.random.default_rng(m)
    net = random_net(rng, [2, 4, 2])
    X = rng.normal(size=(m, 2))
    y = predict(net, X)
    ci = citrus_loss(net, X, y, 0.1, 0.05, ATK)
    si = citrus_si_loss(net, X, y, 0.1, 0.05, ATK)
    assert ci.n_ibp_terms == m * (m - 1) == normalizer(LossKind.CITRUS, m)
    assert si.n_ibp_terms == m * m == normalizer(LossKind.CITRUS_SI, m)
    assert np.isfinite(ci.terms).sum() == m * (m - 1)


def test_citrus_needs_two():
    net = random_net(np.random.default_rng(0), [2, 4, 2])
    with pytest.raises(ContractError):
        citrus_loss(net, np.zeros((1, 2)), [0], 0.1, 0.05, ATK)
    with pytest.raises(ContractError):
        citrus_si_loss(net, np.zeros((0, 2)), [], 0.1, 0.05, ATK)


def test_dispatch_and_gradients(rng):
    net = random_net(rng, [2, 8, 2])
    X = rng.normal(size=(4, 2))
    y = predict(net, X)
    for kind in LossKind:
        spec = LossSpec(kind, 0.1, 0.05)
        a = batch_loss(spec, net, X, y, ATK, rng=np.random.default_rng(0))
        b = batch_loss(spec, net, X, y, ATK, rng=np.random.default_rng(0), grad=True)
        assert a.value == pytest.approx(b.value, rel=1e-12)
        assert len(b.grads) == len(net.parameters())
        assert all(g.shape == p.shape for g, p in zip(b.grads, net.parameters()))


def test_numpy_path_matches_fused_kernel(rng):
    net = random_net(rng, [2, 8, 3])
    X = rng.normal(size=(5, 2))
    y = rng.integers(0, 3, size=5)
    plain = ibp_batch_loss(net, X, y, 0.1).terms
    for name in kernels.available():
        with kernels.using(name):
            fused = ibp_batch_loss(net, X, y, 0.1, grad=True).terms
        assert np.allclose(plain, fused, atol=1e-14)
