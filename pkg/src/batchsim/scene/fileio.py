"""Binary scene container (``.bsc``).

Layout, all little-endian::

    header    16 B   magic "BSCN", u16 version, u16 flags, u32 section count, u32 reserved
    table     24 B per section: 4s tag, 2s dtype ("f8"/"u4"/"i4"), u16 columns, u64 rows, u64 offset
    sections  raw row-major arrays at the offsets named in the table
    trailer   36 B   "HASH" + SHA-256 digest of the canonical content encoding

Required sections are VERT, TRIS, NAVV, NAVT, NAVA and BNDS; COLR is present
when the asset carries vertex colors (flag bit 0).
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import SceneCorruptError, SceneParseError
from .asset import NavMesh, SceneAsset

MAGIC = b"BSCN"
VERSION = 1
FLAG_COLORS = 1
_HEADER = struct.Struct("<4sHHII")
_ENTRY = struct.Struct("<4s2sHQQ")
_TRAILER_TAG = b"HASH"
_TRAILER_SIZE = 4 + 32
_DTYPES = {b"f8": "<f8", b"u4": "<u4", b"i4": "<i4"}
_REQUIRED = (b"VERT", b"TRIS", b"NAVV", b"NAVT", b"NAVA", b"BNDS")


def _sections(asset: SceneAsset) -> list[tuple[bytes, bytes, np.ndarray]]:
    nav = asset.navmesh
    out = [
        (b"VERT", b"f8", asset.vertices),
        (b"TRIS", b"u4", asset.triangles),
    ]
    if asset.vertex_colors is not None:
        out.append((b"COLR", b"f8", asset.vertex_colors))
    out += [
        (b"NAVV", b"f8", nav.vertices),
        (b"NAVT", b"u4", nav.triangles),
        (b"NAVA", b"i4", nav.adjacency),
        (b"BNDS", b"f8", asset.bounds),
    ]
    return out


def encode_scene(asset: SceneAsset) -> bytes:
    sections = _sections(asset)
    flags = FLAG_COLORS if asset.vertex_colors is not None else 0
    offset = _HEADER.size + _ENTRY.size * len(sections)
    table, blobs = [], []
    for tag, code, arr in sections:
        arr2 = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        rows, cols = arr2.shape
        blob = arr2.tobytes()
        table.append(_ENTRY.pack(tag, code, cols, rows, offset))
        blobs.append(blob)
        offset += len(blob)
    return b"".join(
        [_HEADER.pack(MAGIC, VERSION, flags, len(sections), 0), *table, *blobs,
         _TRAILER_TAG, bytes.fromhex(asset.id)]
    )


def save_scene(asset: SceneAsset, path: str | os.PathLike) -> Path:
    path = Path(path)
    data = encode_scene(asset)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def decode_scene(data: bytes) -> SceneAsset:
    n = len(data)
    if n < _HEADER.size:
        raise SceneParseError("file shorter than header", n)
    magic, version, flags, count, _ = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SceneParseError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise SceneParseError(f"unsupported version {version}", 4)
    table_end = _HEADER.size + _ENTRY.size * count
    if count > 64 or table_end > n:
        raise SceneParseError(f"section table of {count} entries does not fit", _HEADER.size)
    if n < table_end + _TRAILER_SIZE:
        raise SceneParseError("missing content hash trailer", n)
    body_end = n - _TRAILER_SIZE

    arrays: dict[bytes, np.ndarray] = {}
    for k in range(count):
        entry_at = _HEADER.size + k * _ENTRY.size
        tag, code, cols, rows, offset = _ENTRY.unpack_from(data, entry_at)
        if code not in _DTYPES:
            raise SceneParseError(f"section {tag!r} has unknown dtype {code!r}", entry_at + 4)
        dtype = np.dtype(_DTYPES[code])
        size = rows * cols * dtype.itemsize
        if offset < table_end or offset + size > body_end:
            raise SceneParseError(
                f"section {tag!r} [{offset}, {offset + size}) runs past end of data", min(offset + size, body_end)
            )
        arrays[tag] = np.frombuffer(data, dtype=dtype, count=rows * cols, offset=offset).reshape(rows, cols)
    missing = [t.decode() for t in _REQUIRED if t not in arrays]
    if missing:
        raise SceneParseError(f"missing sections {missing}", _HEADER.size)
    if bool(flags & FLAG_COLORS) != (b"COLR" in arrays):
        raise SceneParseError("color flag disagrees with section table", 6)
    if data[body_end:body_end + 4] != _TRAILER_TAG:
        raise SceneParseError("bad trailer tag", body_end)
    stored = data[body_end + 4:].hex()

    nav = NavMesh(
        vertices=arrays[b"NAVV"].astype(np.float64),
        triangles=arrays[b"NAVT"].astype(np.int32),
        adjacency=arrays[b"NAVA"].astype(np.int32),
    )
    colors = arrays.get(b"COLR")
    asset = SceneAsset(
        vertices=arrays[b"VERT"].astype(np.float64),
        triangles=arrays[b"TRIS"].astype(np.int32),
        navmesh=nav,
        vertex_colors=None if colors is None else colors.astype(np.float64),
        bounds=arrays[b"BNDS"].astype(np.float64),
    )
    if asset.id != stored:
        raise SceneCorruptError(f"content hash mismatch: stored {stored[:12]}, computed {asset.id[:12]}")
    return asset


def load_scene(path: str | os.PathLike) -> SceneAsset:
    return decode_scene(Path(path).read_bytes())


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
