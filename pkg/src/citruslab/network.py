"""Sequential Affine/ReLU networks over float64 numpy arrays."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from . import kernels
from .errors import DimensionError


@dataclass
class Affine:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"affine weight {self.weight.shape} and bias {self.bias.shape} do not match")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


class ReLU:
    def __eq__(self, other):
        return isinstance(other, ReLU)

    def __repr__(self):
        return "ReLU()"


Layer = Union[Affine, ReLU]


class Network:
    """Ordered list of Affine and ReLU layers.

    The first and last layers must be affine and adjacent affine layers must
    compose. Inputs may be a single vector ``(d_in,)`` or a batch ``(n, d_in)``.
    """

    def __init__(self, layers: Sequence[Layer]):
        self.layers: List[Layer] = list(layers)
        affines = [l for l in self.layers if isinstance(l, Affine)]
        if not affines:
            raise DimensionError("network needs at least one affine layer")
        if not isinstance(self.layers[0], Affine) or not isinstance(self.layers[-1], Affine):
            raise DimensionError("first and last layers must be affine")
        for prev, nxt in zip(affines, affines[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(
                    f"affine output {prev.out_dim} does not match next input {nxt.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def affine_layers(self) -> List[Affine]:
        return [l for l in self.layers if isinstance(l, Affine)]

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in order ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for layer in self.affine_layers():
            out.extend((layer.weight, layer.bias))
        return out

    def kernel_layers(self):
        """``[(W, b, relu_after), ...]`` as consumed by :mod:`citruslab.kernels`."""
        plan = []
        for layer in self.layers:
            if isinstance(layer, Affine):
                plan.append([layer.weight, layer.bias, False])
            else:
                plan[-1][2] = True
        return [tuple(p) for p in plan]

    def copy(self) -> "Network":
        return Network([Affine(l.weight.copy(), l.bias.copy()) if isinstance(l, Affine) else ReLU()
                        for l in self.layers])

    def arch(self) -> List[int]:
        affines = self.affine_layers()
        return [affines[0].in_dim] + [a.out_dim for a in affines]

    def __eq__(self, other):
        if not isinstance(other, Network) or len(self.layers) != len(other.layers):
            return False
        for a, b in zip(self.layers, other.layers):
            if type(a) is not type(b):
                return False
            if isinstance(a, Affine) and not (np.array_equal(a.weight, b.weight)
                                              and np.array_equal(a.bias, b.bias)):
                return False
        return True

    def __repr__(self):
        return f"Network(arch={self.arch()}, layers={len(self.layers)})"


def mlp(sizes: Sequence[int], weights: Sequence[np.ndarray] = None,
        biases: Sequence[np.ndarray] = None) -> Network:
    """Build ``Affine, ReLU, ..., Affine`` for layer sizes like ``[2, 32, 32, 2]``."""
    layers: List[Layer] = []
    n = len(sizes) - 1
    for k in range(n):
        W = np.zeros((sizes[k + 1], sizes[k])) if weights is None else weights[k]
        b = np.zeros(sizes[k + 1]) if biases is None else biases[k]
        layers.append(Affine(W, b))
        if k < n - 1:
            layers.append(ReLU())
    return Network(layers)


def _check_input(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.in_dim:
        raise DimensionError(f"input shape {x.shape} does not match network input {net.in_dim}")
    return x


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Logits of ``net`` at ``x`` (vector or row batch).

    Evaluated by the active kernel backend, which uses the same summation
    order as its box propagation: a radius-0 box reproduces these logits
    bitwise.
    """
    x = _check_input(net, x)
    out = kernels.forward(net.kernel_layers(), x)
    return out[0] if x.ndim == 1 else out


def predict(net: Network, x: np.ndarray):
    """Argmax class; ``np.argmax`` already breaks ties to the lowest index."""
    logits = forward(net, x)
    if logits.ndim == 1:
        return int(np.argmax(logits))
    return np.argmax(logits, axis=1)
