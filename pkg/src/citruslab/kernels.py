"""Backend selection for the hot kernels.

The compiled extension ``citruslab._kernels`` is used when it was built;
otherwise the numpy fallback ``citruslab._kernels_py`` is used. Setting
``CITRUSLAB_PURE=1`` in the environment forces the fallback.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("CITRUSLAB_PURE", "") not in ("", "0"):
        raise ImportError("fallback forced by CITRUSLAB_PURE")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "compiled" if _compiled is not None else "python"


def available():
    return sorted(_BACKENDS)


def backend() -> str:
    return BACKEND


def set_backend(name: str) -> None:
    global _impl, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available()}")
    _impl = _BACKENDS[name]
    BACKEND = name


@contextlib.contextmanager
def using(name: str):
    prev = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _f(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _rows(a):
    a = _f(a)
    return a[None, :] if a.ndim == 1 else a


def _labels(y, n):
    y = np.ascontiguousarray(np.broadcast_to(np.asarray(y, dtype=np.intp), (n,)))
    return y


def forward(layers, X):
    return _impl.forward(layers, _rows(X))


def ce_input_grad(layers, X, y):
    X = _rows(X)
    return _impl.ce_input_grad(layers, X, _labels(y, X.shape[0]))


def box_forward(layers, L, U):
    return _impl.box_forward(layers, _rows(L), _rows(U))


def margin_bounds(layers, L, U, y):
    L = _rows(L)
    return _impl.margin_bounds(layers, L, _rows(U), _labels(y, L.shape[0]))


def ibp_loss_grad(layers, L, U, y, weights=None):
    L = _rows(L)
    n = L.shape[0]
    w = np.ones(n) if weights is None else _f(np.broadcast_to(weights, (n,)))
    return _impl.ibp_loss_grad(layers, L, _rows(U), _labels(y, n), w)
