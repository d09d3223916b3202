"""On-disk formats: NCT1 tensor container, binary PGM/PPM images.

NCT1 layout: magic bytes ``NCT1``, u32 little-endian rank, rank u32
little-endian extents, then the row-major f32 little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"NCT1"


def write_nct(path, array) -> None:
    # asarray keeps rank-0 inputs rank 0 (ascontiguousarray would promote)
    arr = np.asarray(array, dtype="<f4", order="C")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_nct(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload")
        data = np.frombuffer(payload, dtype="<f4")
    return data.reshape(shape).copy()


def _read_netpbm_header(fh, magic: bytes):
    if fh.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise ValueError("truncated netpbm header")
        line = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in line.split())
    width, height, maxval = fields[:3]
    if maxval > 255:
        raise ValueError(f"only 8-bit netpbm supported, maxval={maxval}")
    return width, height


def write_pgm(path, plane) -> None:
    """Write a 2-D uint8 plane (e.g. a class-index mask) as binary PGM."""
    arr = np.asarray(plane)
    if arr.ndim != 2:
        raise ValueError(f"PGM wants a 2-D plane, got shape {arr.shape}")
    arr = arr.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        width, height = _read_netpbm_header(fh, b"P5")
        data = np.frombuffer(fh.read(width * height), dtype=np.uint8)
    if data.size != width * height:
        raise ValueError(f"{path}: truncated PGM payload")
    return data.reshape(height, width).copy()


def write_ppm(path, image) -> None:
    """Write an (H, W, 3) uint8 image as binary PPM."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM wants (H, W, 3), got shape {arr.shape}")
    arr = arr.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        fh.write(arr.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        width, height = _read_netpbm_header(fh, b"P6")
        data = np.frombuffer(fh.read(width * height * 3), dtype=np.uint8)
    if data.size != width * height * 3:
        raise ValueError(f"{path}: truncated PPM payload")
    return data.reshape(height, width, 3).copy()


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def as_path(path) -> Path:
    return Path(path)
