# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; mirrors ``_kernels_py`` exactly in signature and math.

Inputs must be C-contiguous float64 (labels: intp). ``citruslab.kernels``
performs the conversion before dispatching here.
"""
import numpy as np
from libc.math cimport exp, log, fabs
from scipy.linalg.cython_blas cimport dgemm


cdef inline double _sign(double v) nogil:
    if v > 0:
        return 1.0
    if v < 0:
        return -1.0
    return 0.0


cdef void _gemm(const double[:, ::1] A, bint ta, const double[:, ::1] B, bint tb,
                double[:, ::1] out, double beta=0.0):
    """``out = op(A) @ op(B) + beta * out`` on row-major arrays via column-major BLAS."""
    cdef int m = out.shape[0], n = out.shape[1]
    cdef int k = A.shape[0] if ta else A.shape[1]
    cdef int lda = A.shape[1], ldb = B.shape[1], ldc = n
    cdef double alpha = 1.0
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    if m == 0 or n == 0:
        return
    if k == 0:
        for i in range(m):
            for j in range(n):
                out[i, j] *= beta
        return
    # row-major out^T = op(B)^T op(A)^T, and a row-major X is column-major X^T
    dgemm(&cb, &ca, &n, &m, &k, &alpha, <double*>&B[0, 0], &ldb, <double*>&A[0, 0], &lda,
          &beta, &out[0, 0], &ldc)


cdef object _affine(const double[:, ::1] W, const double[::1] b, const double[:, ::1] H, bint relu):
    cdef Py_ssize_t n = H.shape[0], o = W.shape[0]
    cdef Py_ssize_t s, i
    cdef double acc
    out = np.empty((n, o))
    cdef double[:, ::1] O = out
    _gemm(H, False, W, True, O)
    for s in range(n):
        for i in range(o):
            acc = O[s, i] + b[i]
            if relu and acc < 0:
                acc = 0.0
            O[s, i] = acc
    return out


def forward(layers, X):
    h = X
    for W, b, relu in layers:
        h = _affine(W, b, h, relu)
    return np.asarray(h)


def ce_input_grad(layers, X, const Py_ssize_t[::1] y):
    cdef Py_ssize_t n = X.shape[0], s, i, j, K
    cdef double mx, tot
    acts = [X]
    for W, b, relu in layers:
        acts.append(_affine(W, b, acts[len(acts) - 1], relu))
    cdef double[:, ::1] O = acts[len(acts) - 1]
    K = O.shape[1]
    loss = np.empty(n)
    cdef double[::1] Ls = loss
    g = np.empty((n, K))
    cdef double[:, ::1] G = g
    for s in range(n):
        mx = O[s, 0]
        for i in range(1, K):
            if O[s, i] > mx:
                mx = O[s, i]
        tot = 0.0
        for i in range(K):
            G[s, i] = exp(O[s, i] - mx)
            tot += G[s, i]
        Ls[s] = mx + log(tot) - O[s, y[s]]
        for i in range(K):
            G[s, i] /= tot
        G[s, y[s]] -= 1.0
    cdef const double[:, ::1] Wv
    cdef double[:, ::1] A
    cdef double[:, ::1] Gn
    cdef Py_ssize_t li, o, k
    for li in range(len(layers) - 1, -1, -1):
        W, b, relu = layers[li]
        Wv = W
        o = Wv.shape[0]
        k = Wv.shape[1]
        if relu:
            A = acts[li + 1]
            for s in range(n):
                for i in range(o):
                    if A[s, i] <= 0:
                        G[s, i] = 0.0
        gn = np.empty((n, k))
        Gn = gn
        _gemm(G, False, Wv, False, Gn)
        g = gn
        G = Gn
    return loss, np.asarray(g)


cdef object _box_affine(const double[:, ::1] W, const double[::1] b,
                        const double[:, ::1] C, const double[:, ::1] R):
    cdef Py_ssize_t n = C.shape[0], o = W.shape[0]
    cdef Py_ssize_t s, i
    c_out = np.empty((n, o))
    r_out = np.empty((n, o))
    cdef double[:, ::1] Co = c_out
    cdef double[:, ::1] Ro = r_out
    cdef const double[:, ::1] Wabs = np.abs(W)
    _gemm(C, False, W, True, Co)
    _gemm(R, False, Wabs, True, Ro)
    for s in range(n):
        for i in range(o):
            Co[s, i] += b[i]
    return c_out, r_out


cdef object _box_relu(double[:, ::1] C, double[:, ::1] R):
    """In-place ReLU on a center/radius box; returns the (l > 0, u > 0) masks."""
    cdef Py_ssize_t n = C.shape[0], o = C.shape[1], s, i
    cdef double lo, hi
    ml = np.empty((n, o), dtype=np.uint8)
    mu = np.empty((n, o), dtype=np.uint8)
    cdef unsigned char[:, ::1] Ml = ml
    cdef unsigned char[:, ::1] Mu = mu
    for s in range(n):
        for i in range(o):
            lo = C[s, i] - R[s, i]
            hi = C[s, i] + R[s, i]
            Ml[s, i] = lo > 0
            Mu[s, i] = hi > 0
            if lo < 0:
                lo = 0.0
            if hi < 0:
                hi = 0.0
            C[s, i] = (lo + hi) * 0.5
            R[s, i] = (hi - lo) * 0.5
    return ml, mu


def box_forward(layers, L, U):
    c = (L + U) * 0.5
    r = (U - L) * 0.5
    for W, b, relu in layers:
        c, r = _box_affine(W, b, c, r)
        if relu:
            _box_relu(c, r)
    return c - r, c + r


cdef object _penultimate(layers, L, U):
    c = (L + U) * 0.5
    r = (U - L) * 0.5
    cache = []
    for W, b, relu in layers[:len(layers) - 1]:
        c_in, r_in = c, r
        c, r = _box_affine(W, b, c_in, r_in)
        ml = mu = None
        if relu:
            ml, mu = _box_relu(c, r)
        cache.append((c_in, r_in, ml, mu))
    return c, r, cache


def margin_bounds(layers, L, U, const Py_ssize_t[::1] y):
    c, r, _ = _penultimate(layers, L, U)
    W, b, _ = layers[len(layers) - 1]
    cdef const double[:, ::1] Wv = W
    cdef const double[::1] bv = b
    cdef const double[:, ::1] C = c
    cdef const double[:, ::1] R = r
    cdef Py_ssize_t n = C.shape[0], K = Wv.shape[0], k = Wv.shape[1], s, i, j, t
    cdef double acc, d
    out = np.empty((n, K))
    cdef double[:, ::1] M = out
    for s in range(n):
        t = y[s]
        for i in range(K):
            acc = bv[i] - bv[t]
            for j in range(k):
                d = Wv[i, j] - Wv[t, j]
                acc += d * C[s, j] + fabs(d) * R[s, j]
            M[s, i] = acc
    return out


def ibp_loss_grad(layers, L, U,
                  const Py_ssize_t[::1] y, const double[::1] w):
    c, r, cache = _penultimate(layers, L, U)
    W, b, _ = layers[len(layers) - 1]
    cdef const double[:, ::1] Wv = W
    cdef const double[::1] bv = b
    cdef const double[:, ::1] C = c
    cdef const double[:, ::1] R = r
    cdef Py_ssize_t n = C.shape[0], K = Wv.shape[0], k = Wv.shape[1], s, i, j, t
    cdef double acc, d, mx, tot, p, ps

    loss = np.empty(n)
    cdef double[::1] Ls = loss
    m = np.empty(K)
    cdef double[::1] Mv = m
    gW_out = np.zeros((K, k))
    gb_out = np.zeros(K)
    cdef double[:, ::1] GW = gW_out
    cdef double[::1] GB = gb_out
    gc_arr = np.zeros((n, k))
    gr_arr = np.zeros((n, k))
    cdef double[:, ::1] GC = gc_arr
    cdef double[:, ::1] GR = gr_arr

    for s in range(n):
        t = y[s]
        for i in range(K):
            acc = bv[i] - bv[t]
            for j in range(k):
                d = Wv[i, j] - Wv[t, j]
                acc += d * C[s, j] + fabs(d) * R[s, j]
            Mv[i] = acc
        mx = Mv[0]
        for i in range(1, K):
            if Mv[i] > mx:
                mx = Mv[i]
        tot = 0.0
        for i in range(K):
            Mv[i] = exp(Mv[i] - mx)
            tot += Mv[i]
        Ls[s] = mx + log(tot)
        ps = 0.0
        for i in range(K):
            if i == t:
                continue
            p = Mv[i] / tot * w[s]
            ps += p
            GB[i] += p
            for j in range(k):
                d = Wv[i, j] - Wv[t, j]
                acc = p * (C[s, j] + _sign(d) * R[s, j])
                GW[i, j] += acc
                GW[t, j] -= acc
                GC[s, j] += p * d
                GR[s, j] += p * fabs(d)
        GB[t] -= ps

    grads = [gb_out, gW_out]
    cdef const double[:, ::1] Wk
    cdef const double[:, ::1] Cin
    cdef const double[:, ::1] Rin
    cdef const unsigned char[:, ::1] Ml
    cdef const unsigned char[:, ::1] Mu
    cdef double[:, ::1] GWk
    cdef double[:, ::1] GWr
    cdef double[::1] GBk
    cdef double[:, ::1] GCn
    cdef double[:, ::1] GRn
    cdef double gl, gu, a, bb
    cdef Py_ssize_t o, kin, li
    for li in range(len(cache) - 1, -1, -1):
        Wl, bl, relu = layers[li]
        c_in, r_in, ml, mu = cache[li]
        Wk = Wl
        Cin = c_in
        Rin = r_in
        o = Wk.shape[0]
        kin = Wk.shape[1]
        if relu:
            Ml = ml
            Mu = mu
            for s in range(n):
                for i in range(o):
                    a = GC[s, i]
                    bb = GR[s, i]
                    gl = (a - bb) * 0.5 if Ml[s, i] else 0.0
                    gu = (a + bb) * 0.5 if Mu[s, i] else 0.0
                    GC[s, i] = gl + gu
                    GR[s, i] = gu - gl
        gWk = np.empty((o, kin))
        gWr = np.empty((o, kin))
        gbk = np.zeros(o)
        GWk = gWk
        GWr = gWr
        GBk = gbk
        gc_new = np.empty((n, kin))
        gr_new = np.empty((n, kin))
        GCn = gc_new
        GRn = gr_new
        Wabs = np.abs(Wl)
        _gemm(GC, True, Cin, False, GWk)
        _gemm(GR, True, Rin, False, GWr)
        _gemm(GC, False, Wk, False, GCn)
        _gemm(GR, False, Wabs, False, GRn)
        for i in range(o):
            for j in range(kin):
                GWk[i, j] += _sign(Wk[i, j]) * GWr[i, j]
        for s in range(n):
            for i in range(o):
                GBk[i] += GC[s, i]
        grads.append(gbk)
        grads.append(gWk)
        GC = GCn
        GR = GRn
    grads.reverse()
    return loss, grads
