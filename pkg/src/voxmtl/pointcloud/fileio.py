"""Binary frame files and the plain-text debug export.

Layout (little-endian)::

    magic   b"VXFR"
    u16     version
    u16     flags        bit0 fg, bit1 da, bit2 gc, bit3 gh, bit4 ip, bit5 pose
    u32     n_points
    u32     n_boxes
    f32[6]  ego pose                      (if flagged)
    f32[N,3] points
    u8[N]   fg / da / gc                  (each if flagged)
    f32[N]  gh                            (if flagged)
    f32[N,3] ip                           (if flagged)
    f32[M,7] boxes
    i32[M]  box classes
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .frame import PointCloudFrame

MAGIC = b"VXFR"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")
_FLAG_BITS = {"fg": 1, "da": 2, "gc": 4, "gh": 8, "ip": 16, "ego_pose": 32}


class FrameFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def frame_to_bytes(frame: PointCloudFrame) -> bytes:
    flags = 0
    for name, bit in _FLAG_BITS.items():
        if getattr(frame, name) is not None:
            flags |= bit
    parts = [_HEADER.pack(MAGIC, VERSION, flags, len(frame.points), len(frame.boxes))]
    if frame.ego_pose is not None:
        parts.append(frame.ego_pose.astype("<f4").tobytes())
    parts.append(frame.points.astype("<f4").tobytes())
    for name in ("fg", "da", "gc"):
        arr = getattr(frame, name)
        if arr is not None:
            parts.append(arr.astype("u1").tobytes())
    if frame.gh is not None:
        parts.append(frame.gh.astype("<f4").tobytes())
    if frame.ip is not None:
        parts.append(frame.ip.astype("<f4").tobytes())
    parts.append(frame.boxes.astype("<f4").tobytes())
    parts.append(frame.box_classes.astype("<i4").tobytes())
    return b"".join(parts)


def frame_from_bytes(buf: bytes) -> PointCloudFrame:
    if len(buf) < _HEADER.size:
        raise FrameFormatError("truncated header", len(buf))
    magic, version, flags, n, m = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FrameFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FrameFormatError(f"unsupported frame version {version}", 4)
    if flags & ~0x3F:
        raise FrameFormatError(f"unknown flag bits {flags:#x}", 6)
    pos = _HEADER.size

    def take(dtype, count, shape):
        nonlocal pos
        nbytes = np.dtype(dtype).itemsize * count
        if pos + nbytes > len(buf):
            raise FrameFormatError(f"truncated payload, need {nbytes} bytes", pos)
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += nbytes
        return arr

    kw = {}
    if flags & 32:
        kw["ego_pose"] = take("<f4", 6, (6,))
    kw["points"] = take("<f4", 3 * n, (n, 3))
    for name in ("fg", "da", "gc"):
        if flags & _FLAG_BITS[name]:
            kw[name] = take("u1", n, (n,))
    if flags & 8:
        kw["gh"] = take("<f4", n, (n,))
    if flags & 16:
        kw["ip"] = take("<f4", 3 * n, (n, 3))
    kw["boxes"] = take("<f4", 7 * m, (m, 7))
    kw["box_classes"] = take("<i4", m, (m,))
    if pos != len(buf):
        raise FrameFormatError(f"{len(buf) - pos} trailing bytes", pos)
    return PointCloudFrame(**kw)


def write_frame(frame: PointCloudFrame, path) -> None:
    with open(path, "wb") as fh:
        fh.write(frame_to_bytes(frame))


def read_frame(path) -> PointCloudFrame:
    with open(path, "rb") as fh:
        return frame_from_bytes(fh.read())


def export_text(frame: PointCloudFrame, path) -> None:
    """One point per line: x y z fg da gc gh ipx ipy ipz (missing labels as 0)."""
    n = len(frame)
    cols = [frame.points.astype(np.float64)]
    for name in ("fg", "da", "gc", "gh"):
        arr = getattr(frame, name)
        cols.append((np.zeros(n) if arr is None else arr.astype(np.float64))[:, None])
    cols.append(np.zeros((n, 3)) if frame.ip is None else frame.ip.astype(np.float64))
    table = np.concatenate(cols, axis=1)
    with open(path, "w") as fh:
        for row in table:
            fh.write("%.6g %.6g %.6g %d %d %d %.6g %.6g %.6g %.6g\n" % tuple(row))


def list_frames(directory) -> list[str]:
    return sorted(
        os.path.join(directory, f) for f in os.listdir(directory) if f.endswith(".vxf")
    )
