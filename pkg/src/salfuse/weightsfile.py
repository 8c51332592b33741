"""Binary weights container.

Layout (all integers little-endian):

    magic   4 bytes  b"ACFW"
    version 1 byte   0x01
    count   u32      number of entries
    entry:  u16 name length, UTF-8 name, u8 rank, u32 per dimension,
            float32 values in row-major order

Entries preserve insertion order; saving and loading round-trips values
bit for bit. Loading rejects duplicate names, truncation and trailing
bytes, reporting the byte offset of the problem.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from salfuse.errors import ParseError

MAGIC = b"ACFW"
VERSION = 1
MAX_RANK = 4


def serialize_weights(arrays: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, bytes([VERSION]), struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        if not 1 <= len(nb) <= 0xFFFF:
            raise ValueError(f"entry name length {len(nb)} out of range")
        if not 1 <= np.ndim(arr) <= MAX_RANK:
            raise ValueError(f"entry {name!r} has rank {np.ndim(arr)}, "
                             f"supported 1..{MAX_RANK}")
        a = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(bytes([a.ndim]))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes())
    return b"".join(chunks)


def save_weights(path, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(serialize_weights(arrays))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated weights file while reading {what}",
                             offset=len(self.data))
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def deserialize_weights(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise ParseError(f"bad magic, expected {MAGIC!r}", offset=0)
    version = r.take(1, "version")[0]
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    (count,) = struct.unpack("<I", r.take(4, "entry count"))
    arrays: dict[str, np.ndarray] = {}
    for i in range(count):
        at = r.pos
        (name_len,) = struct.unpack("<H", r.take(2, f"entry {i} name length"))
        if name_len == 0:
            raise ParseError(f"entry {i} has an empty name", offset=at)
        try:
            name = r.take(name_len, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(f"entry {i} name is not valid UTF-8", offset=at + 2)
        if name in arrays:
            raise ParseError(f"duplicate entry name {name!r}", offset=at)
        rank = r.take(1, f"entry {name!r} rank")[0]
        if not 1 <= rank <= MAX_RANK:
            raise ParseError(f"entry {name!r} has rank {rank}, supported "
                             f"1..{MAX_RANK}", offset=r.pos - 1)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"entry {name!r} dims"))
        if any(d < 1 for d in dims):
            raise ParseError(f"entry {name!r} has a zero dimension in {dims}",
                             offset=r.pos - 4 * rank)
        n_values = int(np.prod(dims))
        raw = r.take(4 * n_values, f"entry {name!r} values")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(
            np.float32)
    if r.pos != len(data):
        raise ParseError(f"{len(data) - r.pos} trailing bytes after the last "
                         "entry", offset=r.pos)
    return arrays


def load_weights(path) -> dict[str, np.ndarray]:
    return deserialize_weights(Path(path).read_bytes())
