"""Sectioned binary parameter files.

Layout (little endian)::

    "BSNN" u16 version u16 reserved u32 section_count
    per section: u16 name_len, name (utf-8), u8 ndim, u32 dims[ndim],
                 f32 data[prod(dims)], u32 crc32(name + dims + data)

The same container stores optimizer moments, so training state round-trips
bit-exactly when parameters are 32-bit.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import CheckpointError

MAGIC = b"BSNN"
VERSION = 1


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HHI", VERSION, 0, len(tensors))]
    for name, arr in tensors.items():
        raw_name = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        body = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()
        parts.append(body)
        parts.append(struct.pack("<I", zlib.crc32(body)))
    return b"".join(parts)


def decode_tensors(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad checkpoint magic", 0)
    if len(blob) < 12:
        raise CheckpointError("truncated header", len(blob))
    version, _, count = struct.unpack_from("<HHI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", 4)
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = pos
        try:
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 4 * size + 4 > len(blob):
                raise CheckpointError(f"section {name!r} runs past end of file", start)
            data = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            (crc,) = struct.unpack_from("<I", blob, pos)
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            raise CheckpointError(f"truncated section: {exc}", start) from exc
        if zlib.crc32(blob[start:pos]) != crc:
            raise CheckpointError(f"checksum mismatch in section {name!r}", start)
        pos += 4
        out[name] = data.astype(np.float32)
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last section", pos)
    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as f:
        f.write(encode_tensors(tensors))
    os.replace(tmp, path)


def load_tensors(path) -> dict[str, np.ndarray]:
    return decode_tensors(Path(path).read_bytes())
