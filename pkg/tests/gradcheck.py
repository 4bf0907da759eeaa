"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from citruslab import autograd as ag
from citruslab.interval import IntervalTensor, ibp_loss_graph
from citruslab.network import Affine, Network, ReLU

H = 1e-5
FLOOR = 1e-3  # relative error denominators below this are treated as absolute


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), FLOOR)


def scalar_loss(net, kind, X, y, eps):
    """Plain-numpy loss value used by the finite differences."""
    g = ag.Graph()
    p = [g.const(q) for q in net.parameters()]
    if kind == "clean":
        out = ag.cross_entropy_graph(ag.forward_graph(net, p, g.const(X)), y)
    else:
        out = ibp_loss_graph(net, p, IntervalTensor(X - eps, X + eps), y)
    return float(out.value.sum())


def tape_grads(net, kind, X, y, eps):
    g = ag.Graph()
    p = ag.bind(g, net)
    if kind == "clean":
        out = ag.cross_entropy_graph(ag.forward_graph(net, p, g.const(X)), y)
    else:
        out = ibp_loss_graph(net, p, IntervalTensor(X - eps, X + eps), y)
    return g.backward(ag.vsum(out))


def fd_grads(net, kind, X, y, eps, h=H):
    grads = []
    for P in net.parameters():
        G = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + h
            fp = scalar_loss(net, kind, X, y, eps)
            P[idx] = old - h
            fm = scalar_loss(net, kind, X, y, eps)
            P[idx] = old
            G[idx] = (fp - fm) / (2 * h)
        grads.append(G)
    return grads


def kink_distance(net, X, eps):
    """Smallest distance of any pre-activation bound (or weight, for |W|) from a kink."""
    lo, hi = X - eps, X + eps
    c, r = (lo + hi) / 2, (hi - lo) / 2
    d = np.inf
    for layer in net.layers:
        if isinstance(layer, Affine):
            if eps > 0:
                d = min(d, np.abs(layer.weight).min())
            c = c @ layer.weight.T + layer.bias
            r = r @ np.abs(layer.weight).T
        else:
            d = min(d, np.abs(c - r).min(), np.abs(c + r).min())
            l2, u2 = np.maximum(c - r, 0), np.maximum(c + r, 0)
            c, r = (l2 + u2) / 2, (u2 - l2) / 2
    if eps > 0:
        W = net.layers[-1].weight
        D = W[:, None, :] - W[None, :, :]
        off = ~np.eye(W.shape[0], dtype=bool)
        d = min(d, np.abs(D[off]).min())
    return d


def random_case(rng, kind, sizes=(2, 8, 2), n=3, max_tries=100):
    """A (net, X, y, eps) whose loss is smooth within the FD step (resampled near kinks)."""
    for _ in range(max_tries):
        layers = []
        for k in range(len(sizes) - 1):
            layers.append(Affine(rng.normal(size=(sizes[k + 1], sizes[k])) / np.sqrt(sizes[k]),
                                 rng.normal(size=sizes[k + 1]) * 0.3))
            if k < len(sizes) - 2:
                layers.append(ReLU())
        net = Network(layers)
        X = rng.normal(size=(n, sizes[0]))
        y = rng.integers(0, sizes[-1], size=n)
        eps = 0.0 if kind == "clean" else float(rng.uniform(0.01, 0.1))
        if kink_distance(net, X, eps) > 1e-3:
            return net, X, y, eps
    raise RuntimeError("no smooth case found")
