"""Binary Netpbm (P5 grey / P6 RGB) reading and writing.

Samples are 8-bit when maxval < 256 and 16-bit big-endian otherwise, as
the Netpbm format requires. Values are normalized by maxval on read.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from .errors import FormatError

_TOKEN = re.compile(rb"\s*(?:#[^\n\r]*[\n\r]\s*)*")


def _header(data: bytes):
    pos = 0
    fields = []
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"not a binary PGM/PPM file (magic {magic!r})")
    pos = 2
    for _ in range(3):
        pos = _TOKEN.match(data, pos).end()
        m = re.compile(rb"\d+").match(data, pos)
        if m is None:
            raise FormatError("malformed Netpbm header")
        fields.append(int(m.group()))
        pos = m.end()
    if pos >= len(data) or data[pos:pos + 1] not in b" \t\r\n":
        raise FormatError("missing whitespace after maxval")
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"invalid Netpbm dimensions or maxval {fields}")
    return magic, width, height, maxval, pos + 1


def decode(data: bytes) -> np.ndarray:
    """Pixels as float64 ``(H, W, C)`` in [0, 1]."""
    magic, width, height, maxval, offset = _header(data)
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    need = count * dtype.itemsize
    if len(data) - offset < need:
        raise FormatError(f"truncated pixel data: {len(data) - offset} of {need} bytes")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=offset).astype(np.float64)
    if np.any(raw > maxval):
        raise FormatError("sample exceeds maxval")
    return (raw / maxval).reshape(height, width, channels)


def encode(pixels, maxval: int = 255) -> bytes:
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim == 2:
        px = px[:, :, None]
    height, width, channels = px.shape
    if channels not in (1, 3):
        raise ValueError("Netpbm stores 1 or 3 channels")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in [1, 65535]")
    magic = "P6" if channels == 3 else "P5"
    dtype = ">u2" if maxval > 255 else "u1"
    q = np.rint(np.clip(px, 0.0, 1.0) * maxval).astype(dtype)
    return f"{magic}\n{width} {height}\n{maxval}\n".encode("ascii") + q.tobytes()


def read(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write(path, pixels, maxval: int = 255) -> None:
    atomic_write(path, encode(pixels, maxval))


def atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
