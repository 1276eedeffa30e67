"""On-disk formats: 8-bit PNG images/masks and the WEDP float32 depth file.

Depth layout: magic ``WEDP``, uint32 width, uint32 height, then row-major
float32 samples; every scalar little-endian.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import DepthMap

DEPTH_MAGIC = b"WEDP"
_HEADER = struct.Struct("<4sII")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a sibling temp file + rename so readers never see partials."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_png(path: str | Path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError(f"png payloads must be uint8, got {arr.dtype}")
    img = Image.fromarray(arr)
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img)


def encode_png(array: np.ndarray) -> bytes:
    import io

    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError(f"png payloads must be uint8, got {arr.dtype}")
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    import io

    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img)


def encode_depth(depth: DepthMap) -> bytes:
    h, w = depth.shape
    payload = depth.values.astype("<f4").tobytes(order="C")
    return _HEADER.pack(DEPTH_MAGIC, w, h) + payload


def decode_depth(data: bytes, normalized: bool = False) -> DepthMap:
    if len(data) < _HEADER.size:
        raise ValueError("depth payload shorter than header")
    magic, w, h = _HEADER.unpack_from(data)
    if magic != DEPTH_MAGIC:
        raise ValueError(f"bad depth magic {magic!r}, expected {DEPTH_MAGIC!r}")
    expect = _HEADER.size + 4 * w * h
    if len(data) != expect:
        raise ValueError(f"depth payload is {len(data)} bytes, expected {expect} for {w}x{h}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w)
    return DepthMap(values.copy(), normalized=normalized)


def save_depth(path: str | Path, depth: DepthMap) -> None:
    atomic_write_bytes(path, encode_depth(depth))


def load_depth(path: str | Path, normalized: bool = False) -> DepthMap:
    return decode_depth(Path(path).read_bytes(), normalized=normalized)
