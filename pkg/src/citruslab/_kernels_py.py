"""Pure-numpy implementation of the hot kernels.

Same signatures as the compiled ``_kernels`` extension. ``layers`` is a list
of ``(W, b, relu_after)`` with the last entry having ``relu_after=False``.
All arrays are row batches: ``X``, ``L``, ``U`` are ``(n, d_in)``.
"""
import numpy as np


def forward(layers, X):
    h = X
    for W, b, relu in layers:
        h = h @ W.T + b
        if relu:
            h = np.maximum(h, 0.0)
    return h


def ce_input_grad(layers, X, y):
    """Per-row cross-entropy at ``X`` and its gradient with respect to ``X``."""
    h = X
    masks = []
    for W, b, relu in layers:
        h = h @ W.T + b
        if relu:
            m = h > 0
            masks.append(m)
            h = np.maximum(h, 0.0)  # NaN propagates, as in the compiled kernel
        else:
            masks.append(None)
    mx = h.max(axis=1, keepdims=True)
    e = np.exp(h - mx)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(h.shape[0])
    loss = (mx[:, 0] + np.log(s[:, 0])) - h[rows, y]
    g = e / s
    g[rows, y] -= 1.0
    for (W, b, relu), m in zip(reversed(layers), reversed(masks)):
        if m is not None:
            g = g * m
        g = g @ W
    return loss, g


def _to_box(c, r):
    return c - r, c + r


def box_forward(layers, L, U):
    c = (L + U) * 0.5
    r = (U - L) * 0.5
    for W, b, relu in layers:
        c = c @ W.T + b
        r = r @ np.abs(W).T
        if relu:
            lo, hi = np.maximum(c - r, 0.0), np.maximum(c + r, 0.0)
            c = (lo + hi) * 0.5
            r = (hi - lo) * 0.5
    return _to_box(c, r)


def _penultimate(layers, L, U, keep):
    c = (L + U) * 0.5
    r = (U - L) * 0.5
    cache = []
    for W, b, relu in layers[:-1]:
        c_in, r_in = c, r
        c = c_in @ W.T + b
        r = r_in @ np.abs(W).T
        ml = mu = None
        if relu:
            lo, hi = c - r, c + r
            ml, mu = lo > 0, hi > 0
            lo = np.maximum(lo, 0.0)
            hi = np.maximum(hi, 0.0)
            c = (lo + hi) * 0.5
            r = (hi - lo) * 0.5
        if keep:
            cache.append((c_in, r_in, ml, mu))
    return c, r, cache


def margin_bounds(layers, L, U, y):
    """Elided upper bounds on ``o_i - o_y``; column ``y`` is exactly 0."""
    c, r, _ = _penultimate(layers, L, U, False)
    W, b, _ = layers[-1]
    D = W[None, :, :] - W[y][:, None, :]
    return (np.einsum("nkj,nj->nk", D, c) + np.einsum("nkj,nj->nk", np.abs(D), r)
            + (b[None, :] - b[y][:, None]))


def ibp_loss_grad(layers, L, U, y, w):
    """Per-row ``ln(1 + sum_{i!=y} exp(margin_i))`` and the gradient of
    ``sum_n w[n] * loss[n]`` for ``[W0, b0, W1, b1, ...]``."""
    c, r, cache = _penultimate(layers, L, U, True)
    W, b, _ = layers[-1]
    D = W[None, :, :] - W[y][:, None, :]
    aD = np.abs(D)
    m = np.einsum("nkj,nj->nk", D, c) + np.einsum("nkj,nj->nk", aD, r) + (b[None, :] - b[y][:, None])
    mx = m.max(axis=1, keepdims=True)
    e = np.exp(m - mx)
    s = e.sum(axis=1, keepdims=True)
    loss = mx[:, 0] + np.log(s[:, 0])
    p = (e / s) * w[:, None]

    gD = p[:, :, None] * (c[:, None, :] + np.sign(D) * r[:, None, :])
    gW = gD.sum(axis=0)
    np.add.at(gW, y, -gD.sum(axis=1))
    gb = p.sum(axis=0)
    np.add.at(gb, y, -p.sum(axis=1))
    gc = np.einsum("nk,nkj->nj", p, D)
    gr = np.einsum("nk,nkj->nj", p, aD)
    grads = [gb, gW]
    for (Wk, bk, relu), (c_in, r_in, ml, mu) in zip(reversed(layers[:-1]), reversed(cache)):
        if relu:
            gl = (gc - gr) * 0.5 * ml
            gu = (gc + gr) * 0.5 * mu
            gc, gr = gl + gu, gu - gl
        grads.append(gc.sum(axis=0))
        grads.append(gc.T @ c_in + np.sign(Wk) * (gr.T @ r_in))
        gc = gc @ Wk
        gr = gr @ np.abs(Wk)
    grads.reverse()
    return loss, grads
