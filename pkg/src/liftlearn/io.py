"""Matrix container and CSV output.

Container layout (all integers little-endian)::

    b"SPLL" | u32 version | u8 dtype tag | u32 rank | u64 dims[rank] | payload | 32-byte sha256

The payload is the array in row-major order as little-endian float64; the
checksum covers every preceding byte.
"""
from __future__ import annotations

import csv
import hashlib
import os
import struct
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

MAGIC = b"SPLL"
VERSION = 1
DTYPE_F64LE = 1
_DTYPES = {DTYPE_F64LE: np.dtype("<f8")}

PathLike = Union[str, os.PathLike]


class ContainerError(ValueError):
    """Malformed or corrupted matrix container."""


def encode_matrix(a: np.ndarray) -> bytes:
    a = np.array(a, dtype="<f8", order="C")
    header = MAGIC + struct.pack("<IBI", VERSION, DTYPE_F64LE, a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    body = header + a.tobytes(order="C")
    return body + hashlib.sha256(body).digest()


def decode_matrix(buf: bytes) -> np.ndarray:
    if len(buf) < 4 + 9 + 32 or buf[:4] != MAGIC:
        raise ContainerError("not a matrix container (bad magic)")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ContainerError("container checksum mismatch")
    version, tag, rank = struct.unpack_from("<IBI", body, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if tag not in _DTYPES:
        raise ContainerError(f"unknown dtype tag {tag}")
    off = 4 + struct.calcsize("<IBI")
    shape = struct.unpack_from(f"<{rank}Q", body, off)
    off += 8 * rank
    dtype = _DTYPES[tag]
    count = int(np.prod(shape)) if rank else 1
    if len(body) - off != count * dtype.itemsize:
        raise ContainerError("payload size does not match header dimensions")
    return np.frombuffer(body, dtype=dtype, count=count, offset=off).reshape(shape).astype(float)


def save_matrix(path: PathLike, a: np.ndarray) -> str:
    """Write ``a`` and return the sha256 hex digest of the file."""
    data = encode_matrix(a)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return hashlib.sha256(data).hexdigest()


def load_matrix(path: PathLike) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())


def file_sha256(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fmt(v) -> str:
    """Full-precision (17 significant digit) text for floats."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: PathLike):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
