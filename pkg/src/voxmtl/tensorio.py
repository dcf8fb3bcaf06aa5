"""Versioned little-endian tensor tables (checkpoints and prediction dumps).

Layout::

    magic b"VXTT" | u16 version | u16 reserved | u32 meta_len | meta (JSON, utf-8)
    u32 n_tensors
    per tensor: u16 name_len | name | u8 dtype | u8 ndim | u32[ndim] shape | data
    u32 crc32 of everything above
"""
from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"VXTT"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8", 2: "<i4", 3: "<i8", 4: "u1"}
_CODES = {np.dtype(v).str: k for k, v in _DTYPES.items()}


class TensorFileError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        where = "" if offset is None else f" (at byte offset {offset})"
        super().__init__(message + where)
        self.offset = offset


def dumps(meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    meta_b = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [struct.pack("<4sHHI", MAGIC, VERSION, 0, len(meta_b)), meta_b, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(arr)
        if a.dtype == np.bool_:
            a = a.astype(np.uint8)
        le = a.astype(a.dtype.newbyteorder("<"), copy=False)
        code = _CODES.get(le.dtype.str)
        if code is None:
            raise TypeError(f"unsupported dtype {a.dtype} for tensor {name!r}")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(le).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(buf) < 16:
        raise TensorFileError("file too short", len(buf))
    magic, version, _, meta_len = struct.unpack_from("<4sHHI", buf, 0)
    if magic != MAGIC:
        raise TensorFileError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise TensorFileError(f"unsupported version {version}", 4)
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise TensorFileError("checksum mismatch (corrupt or truncated file)", len(buf) - 4)
    pos = 12
    end = len(buf) - 4

    def need(n):
        if pos + n > end:
            raise TensorFileError(f"truncated, need {n} bytes", pos)

    need(meta_len)
    meta = json.loads(buf[pos : pos + meta_len].decode())
    pos += meta_len
    need(4)
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        need(2)
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(nlen + 2)
        name = buf[pos : pos + nlen].decode()
        pos += nlen
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        if code not in _DTYPES:
            raise TensorFileError(f"unknown dtype code {code}", pos - 2)
        need(4 * ndim)
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dt = np.dtype(_DTYPES[code])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        need(nbytes)
        tensors[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != end:
        raise TensorFileError(f"{end - pos} unexpected trailing bytes", pos)
    return meta, tensors


def save(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(meta, tensors))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return loads(fh.read())
