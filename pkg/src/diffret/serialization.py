"""
Named-tensor binary layout shared by corpus files and checkpoints.

A file is ``magic (4 bytes) | version u32 | header length u32 | header UTF-8 |
records...`` where each record is ``name length u32 | name | rank u32 |
dims u32 * rank | payload``. Integers are little-endian; the payload is
little-endian IEEE-754 of a per-file width (f64 for checkpoints, f32 for
corpora).
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .exceptions import HeaderError, TruncatedError, VersionError

_U32 = struct.Struct("<I")


def write_u32(buf, value: int) -> None:
    buf.write(_U32.pack(value))


def encode_record(name: str, array: np.ndarray, dtype: str) -> bytes:
    array = np.ascontiguousarray(array, dtype=dtype)
    raw = name.encode("utf-8")
    out = io.BytesIO()
    write_u32(out, len(raw))
    out.write(raw)
    write_u32(out, array.ndim)
    for d in array.shape:
        write_u32(out, d)
    out.write(array.tobytes(order="C"))
    return out.getvalue()


def write_file(path, magic: bytes, version: int, header: str, records: bytes) -> None:
    raw = header.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        write_u32(fh, version)
        write_u32(fh, len(raw))
        fh.write(raw)
        fh.write(records)


class Reader:
    """Bounds-checked cursor over an in-memory file image."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(f"file ends after {len(self.data)} bytes, needed {self.pos + n}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)

    def record(self, dtype: str) -> tuple[str, np.ndarray]:
        name = self.take(self.u32()).decode("utf-8")
        rank = self.u32()
        if rank > 32:
            raise HeaderError(f"implausible tensor rank {rank} for {name!r}")
        shape = tuple(self.u32() for _ in range(rank))
        width = np.dtype(dtype).itemsize
        count = int(np.prod(shape)) if shape else 1
        payload = self.take(count * width)
        return name, np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def read_file(path, magic: bytes, version: int) -> tuple[str, Reader]:
    """Validate magic and version; return (header text, reader positioned at the records)."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = Reader(data)
    if len(data) < 4 or data[:4] != magic:
        raise HeaderError(f"{path}: bad magic bytes, expected {magic!r}")
    r.take(4)
    found = r.u32()
    if found != version:
        raise VersionError(f"{path}: format version {found}, this build reads {version}")
    header = r.take(r.u32()).decode("utf-8")
    return header, r
