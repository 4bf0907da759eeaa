"""Binary network checkpoints.

Layout (all integers little-endian)::

    b"CTRW" | u32 version | u32 layer count
    per layer: u8 tag (0 affine, 1 relu)
        affine: u32 rows | u32 cols | rows*cols f64 weights (row-major) | rows f64 biases
    u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError
from .network import Affine, Network, ReLU

MAGIC = b"CTRW"
VERSION = 1
TAG_AFFINE = 0
TAG_RELU = 1


def dumps(net: Network) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(net.layers))]
    for layer in net.layers:
        if isinstance(layer, Affine):
            rows, cols = layer.weight.shape
            parts.append(struct.pack("<BII", TAG_AFFINE, rows, cols))
            parts.append(layer.weight.astype("<f8").tobytes(order="C"))
            parts.append(layer.bias.astype("<f8").tobytes())
        else:
            parts.append(struct.pack("<B", TAG_RELU))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(buf: bytes) -> Network:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint CRC mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off, layers = 12, []
    try:
        for _ in range(count):
            (tag,) = struct.unpack_from("<B", body, off)
            off += 1
            if tag == TAG_RELU:
                layers.append(ReLU())
            elif tag == TAG_AFFINE:
                rows, cols = struct.unpack_from("<II", body, off)
                off += 8
                W = np.frombuffer(body, "<f8", rows * cols, off).reshape(rows, cols)
                off += 8 * rows * cols
                b = np.frombuffer(body, "<f8", rows, off)
                off += 8 * rows
                layers.append(Affine(W.astype(np.float64), b.astype(np.float64)))
            else:
                raise FormatError(f"unknown layer tag {tag}")
    except (struct.error, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"truncated checkpoint: {e}") from None
    if off != len(body):
        raise FormatError("trailing bytes after last layer")
    return Network(layers)


def save(net: Network, path) -> None:
    Path(path).write_bytes(dumps(net))


def load(path) -> Network:
    return loads(Path(path).read_bytes())
