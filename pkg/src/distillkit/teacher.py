"""Precomputed teacher embeddings and the EMB1 file format.

EMB1 layout (little endian): magic ``EMB1``, u32 dim, u32 count, then per
record u16 id-length, UTF-8 id, u32 dim, ``dim`` float32 values.
"""

from __future__ import annotations

import struct
from typing import Iterable, Mapping

import numpy as np

from . import _binary
from .errors import DataError, FormatError, MissingIdError

EMB1_MAGIC = b"EMB1"
HEADER_BYTES = 12


class TeacherStore:
    """Read-only map from utterance id to a fixed-length embedding."""

    def __init__(self, dim: int, entries: Mapping[str, np.ndarray] | None = None):
        self.dim = int(dim)
        self._entries: dict[str, np.ndarray] = {}
        for utt, vec in (entries or {}).items():
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (self.dim,):
                raise DataError(f"{utt}: embedding shape {vec.shape}, expected ({self.dim},)")
            vec.setflags(write=False)
            self._entries[utt] = vec

    def lookup(self, utt: str) -> np.ndarray:
        try:
            return self._entries[utt]
        except KeyError:
            raise MissingIdError(utt) from None

    __getitem__ = lookup

    def __contains__(self, utt) -> bool:
        return utt in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def items(self):
        return self._entries.items()

    def matrix(self, ids: Iterable[str]) -> np.ndarray:
        return np.stack([self.lookup(u) for u in ids])


def _emb1_chunks(entries, dim):
    items = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
    seen = set()
    for utt, vec in items:
        if utt in seen:
            raise DataError(f"duplicate id {utt!r}")
        seen.add(utt)
        if np.shape(vec) != (dim,):
            raise DataError(f"{utt}: embedding shape {np.shape(vec)}, expected ({dim},)")
    yield EMB1_MAGIC + struct.pack("<II", dim, len(items))
    for utt, vec in items:
        yield _binary.pack_text(utt) + struct.pack("<I", dim) + _binary.pack_floats(vec)


def write_store(entries, dim: int, path) -> None:
    """Write ``entries`` (mapping or ``(id, vector)`` pairs) atomically as EMB1."""
    _binary.atomic_write(path, _emb1_chunks(entries, int(dim)))


def encode_store(entries, dim: int) -> bytes:
    return b"".join(_emb1_chunks(entries, int(dim)))


def decode_store(data: bytes) -> TeacherStore:
    r = _binary.Reader(data)
    r.magic(EMB1_MAGIC)
    dim = r.u32("dim")
    count = r.u32("record count")
    entries = {}
    for i in range(count):
        r.record = i
        start = r.pos
        utt = r.text("id")
        dim_at = r.pos
        rec_dim = r.u32("record dim")
        if rec_dim != dim:
            raise FormatError(f"record dim {rec_dim} != store dim {dim}", dim_at, i)
        if utt in entries:
            raise FormatError(f"duplicate id {utt!r}", start, i)
        entries[utt] = r.floats(dim, "embedding values")
    r.record = None
    r.done()
    return TeacherStore(dim, entries)


def read_store(path) -> TeacherStore:
    with open(path, "rb") as fh:
        return decode_store(fh.read())


def read_tsv_embeddings(path) -> tuple[dict[str, np.ndarray], int]:
    """Parse ``id<TAB>v1,v2,...,vD`` lines (blank lines ignored)."""
    entries: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                utt, values = line.split("\t")
                vec = np.array([float(v) for v in values.split(",")], dtype=np.float32)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: expected 'id<TAB>v1,...,vD'") from exc
            if dim is None:
                dim = vec.size
            if vec.size != dim:
                raise DataError(f"{path}:{lineno}: {vec.size} values, expected {dim}")
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if utt in entries:
                raise DataError(f"{path}:{lineno}: duplicate id {utt!r}")
            entries[utt] = vec
    if dim is None:
        raise DataError(f"{path}: no embeddings found")
    return entries, dim
