"""Datasets: synthetic 2-D generators and an IDX (MNIST-format) reader."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np
from sklearn.datasets import make_blobs, make_moons

from .errors import ConfigError, ContractError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray   # (n, d_in)
    labels: np.ndarray   # (n,)
    data_range: Optional[Tuple[float, float]] = None
    n_classes: Optional[int] = None

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise ContractError("inputs must be (n, d) with one label per row")
        if len(self.labels) < 1:
            raise ContractError("dataset must be non-empty")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ContractError("labels out of range")
        if self.data_range is not None:
            self.data_range = (float(self.data_range[0]), float(self.data_range[1]))

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.data_range, self.n_classes)

    def batches(self, n: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Consecutive batches of ``n``; the last one may be shorter."""
        for s in range(0, len(self), n):
            yield self.inputs[s:s + n], self.labels[s:s + n]


def gen_data(kind: str, size: int, noise: float, seed: int, scale: float = 1.0) -> Dataset:
    """``size`` points of a two-class 2-D problem, deterministic per seed.

    ``blobs``: isotropic Gaussians with std ``noise`` at (-1, 0) (class 0)
    and (1, 0) (class 1). ``moons``: two interleaving unit half circles with
    Gaussian noise of std ``noise``. All coordinates are then multiplied by
    ``scale``, which sets how large a fixed eps is relative to the class gap.
    """
    if scale <= 0:
        raise ConfigError("scale must be positive")
    if size < 4:
        raise ConfigError("need at least 2 points per class")
    if noise < 0:
        raise ConfigError("noise must be non-negative")
    if kind == "blobs":
        X, y = make_blobs(n_samples=[size // 2, size - size // 2], centers=[(-1.0, 0.0), (1.0, 0.0)],
                          cluster_std=noise, random_state=seed)
    elif kind == "moons":
        X, y = make_moons(n_samples=size, noise=noise if noise > 0 else None, random_state=seed)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    return Dataset(X * scale if scale != 1.0 else X, y, None, 2)


def train_test_split(ds: Dataset, n_test: int, seed: int) -> Tuple[Dataset, Dataset]:
    idx = np.random.default_rng(seed).permutation(len(ds))
    return ds.subset(idx[n_test:]), ds.subset(idx[:n_test])


def _read(path) -> bytes:
    raw = Path(path).read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def _header(buf: bytes, magic: int, ndim: int, path):
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise FormatError(f"{path}: truncated header")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    return struct.unpack(f">{ndim}I", buf[4:need]), need


def downsample2(images: np.ndarray) -> np.ndarray:
    """2x2 average pooling over ``(n, h, w)``; odd trailing rows/columns are dropped."""
    n, h, w = images.shape
    h2, w2 = h // 2, w // 2
    x = images[:, :2 * h2, :2 * w2].reshape(n, h2, 2, w2, 2)
    return x.mean(axis=(2, 4))


def load_idx(images_path, labels_path, downsample: int = 0) -> Dataset:
    """Read IDX image/label files (optionally gzipped) into a ``[0, 1]`` dataset.

    ``downsample`` applies 2x average pooling that many times before flattening.
    """
    ib, lb = _read(images_path), _read(labels_path)
    (n, h, w), off = _header(ib, IMAGE_MAGIC, 3, images_path)
    (m,), loff = _header(lb, LABEL_MAGIC, 1, labels_path)
    if n != m:
        raise FormatError(f"image count {n} does not match label count {m}")
    if len(ib) < off + n * h * w:
        raise FormatError(f"{images_path}: truncated pixel data")
    if len(lb) < loff + n:
        raise FormatError(f"{labels_path}: truncated label data")
    pix = np.frombuffer(ib, dtype=np.uint8, count=n * h * w, offset=off).reshape(n, h, w)
    labels = np.frombuffer(lb, dtype=np.uint8, count=n, offset=loff).astype(np.intp)
    images = pix.astype(np.float64) / 255.0
    for _ in range(downsample):
        images = downsample2(images)
    return Dataset(images.reshape(n, -1), labels, (0.0, 1.0), max(10, int(labels.max()) + 1))


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images ``(n, h, w)`` and labels in IDX format (test fixtures, tooling)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes())
