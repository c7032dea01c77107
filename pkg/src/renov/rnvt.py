"""RNVT tensor container and small image/point-cloud writers.

Layout (little-endian throughout):

    magic   4 bytes  b"RNVT"
    version u32      1
    dtype   u8       0=f32, 1=f64, 2=u8, 3=i64
    ndim    u8
    pad     2 bytes  zero
    dims    ndim x u64
    data    row-major

Total length = 12 + 8*ndim + itemsize*prod(dims).  All writers go through a
temp file + rename so a killed process never leaves a truncated file under
the final name.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import InputError

MAGIC = b"RNVT"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("u1"): 2,
    np.dtype("<i8"): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _atomic_write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(blob)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def encode_tensor(arr: np.ndarray) -> bytes:
    """Serialize an array to RNVT bytes. Dtype must be one of the four codes."""
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if np.dtype(dt) not in _DTYPE_CODES:
        raise InputError(f"unsupported dtype for RNVT: {arr.dtype}")
    code = _DTYPE_CODES[np.dtype(dt)]
    header = struct.pack("<4sIBBxx", MAGIC, VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    data = np.ascontiguousarray(arr.astype(dt, copy=False)).tobytes()
    return header + dims + data


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 12:
        raise InputError("RNVT blob shorter than header")
    magic, version, code, ndim = struct.unpack_from("<4sIBBxx", blob, 0)
    if magic != MAGIC:
        raise InputError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise InputError(f"unsupported RNVT version {version}")
    if code not in _CODE_DTYPES:
        raise InputError(f"unknown dtype code {code}")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 12)
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = 12 + 8 * ndim + dtype.itemsize * count
    if len(blob) != expected:
        raise InputError(f"RNVT length {len(blob)} != declared {expected}")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=12 + 8 * ndim)
    return data.reshape(dims).copy()


def write_tensor(path, arr: np.ndarray) -> None:
    _atomic_write_bytes(path, encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_tensor(f.read())


def write_json(path, obj) -> None:
    """Deterministic JSON (sorted keys, fixed separators), written atomically."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    _atomic_write_bytes(path, blob + b"\n")


def read_json(path):
    with open(path, "rb") as f:
        return json.loads(f.read().decode("utf-8"))


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 PPM, maxval 255. Accepts HxWx3 floats in [0,1] or uint8."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"PPM wants HxWx3, got {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    _atomic_write_bytes(path, b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Binary P5 PGM, maxval 255. Accepts HxW floats in [0,1] or uint8."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise InputError(f"PGM wants HxW, got {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    _atomic_write_bytes(path, b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def write_ply(path, points: np.ndarray, payload: np.ndarray | None = None) -> None:
    """Binary little-endian PLY with float32 x,y,z plus optional payload channels."""
    pts = np.asarray(points, dtype=np.float32)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError(f"PLY wants Mx3 points, got {pts.shape}")
    cols = [pts]
    names = ["x", "y", "z"]
    if payload is not None:
        pay = np.asarray(payload, dtype=np.float32)
        if pay.shape[0] != pts.shape[0]:
            raise InputError("payload row count does not match points")
        cols.append(pay.reshape(pts.shape[0], -1))
        names += [f"c{i}" for i in range(cols[1].shape[1])]
    body = np.concatenate(cols, axis=1).astype("<f4").tobytes()
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {pts.shape[0]}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")
    _atomic_write_bytes(path, ("\n".join(header) + "\n").encode("ascii") + body)
