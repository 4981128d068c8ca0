"""Little-endian record reading/writing shared by the FTR1, EMB1 and NET1 formats."""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError


class Reader:
    """Cursor over an in-memory byte buffer that reports offsets on failure."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.record = None

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated file: expected {n} bytes for {what}, "
                f"{len(self.data) - self.pos} available",
                self.pos,
                self.record,
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def magic(self, expected: bytes) -> None:
        got = self.take(len(expected), "magic")
        if got != expected:
            raise FormatError(f"bad magic {got!r}, expected {expected!r}", 0)

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def text(self, what: str) -> str:
        n = self.u16(what + " length")
        start = self.pos
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} is not valid UTF-8", start, self.record) from exc

    def floats(self, count: int, what: str) -> np.ndarray:
        start = self.pos
        arr = np.frombuffer(self.take(4 * count, what), dtype="<f4").copy()
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise FormatError(f"non-finite value in {what}", start + 4 * bad, self.record)
        return arr

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{len(self.data) - self.pos} trailing bytes after last record", self.pos
            )


def pack_text(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"id too long ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def pack_floats(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def atomic_write(path, chunks) -> None:
    """Write an iterable of byte chunks to ``path`` via temp file + rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            for chunk in chunks:
                fh.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
