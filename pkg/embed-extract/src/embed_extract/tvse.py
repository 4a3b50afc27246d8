"""Binary embedding-table writer.

Format, all little-endian: magic ``TVSE``, u16 version (1), u32 dim,
u64 entry count, then per entry a u16 id byte-length, the UTF-8 id bytes
and dim float32 values.  Vectors are stored unit-normalized so consumers
can rely on cosine similarity being a plain dot product.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"TVSE"
VERSION = 1


class ExportError(ValueError):
    """Raised when an output table cannot be produced as specified."""


def unit_f32(vec: np.ndarray, what: str) -> np.ndarray:
    """Normalize in float64, store float32; rejects zero and non-finite."""
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1:
        raise ExportError(f"{what}: expected a 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ExportError(f"{what}: vector has non-finite entries")
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise ExportError(f"{what}: zero vector cannot be normalized")
    return (v / norm).astype(np.float32)


def write_table(
    path: str | Path, dim: int, entries: Sequence[tuple[str, np.ndarray]]
) -> int:
    """Write (id, vector) pairs to ``path``; returns the entry count.

    Ids must be unique and vectors must match ``dim``.  Entries are written
    in the order given, so identical inputs produce identical bytes.
    """
    if dim < 1:
        raise ExportError(f"dim must be >= 1, got {dim}")
    seen: set[str] = set()
    packed: list[bytes] = []
    for key, vec in entries:
        if key in seen:
            raise ExportError(f"duplicate embedding id: {key!r}")
        seen.add(key)
        raw = key.encode("utf-8")
        if not raw:
            raise ExportError("empty embedding id")
        if len(raw) > 0xFFFF:
            raise ExportError(f"embedding id too long: {key[:32]!r}...")
        v = unit_f32(vec, f"embedding {key!r}")
        if v.shape[0] != dim:
            raise ExportError(f"embedding {key!r} has dim {v.shape[0]}, table dim is {dim}")
        packed.append(struct.pack("<H", len(raw)) + raw + v.tobytes())
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HIQ", VERSION, dim, len(packed)))
        for chunk in packed:
            fh.write(chunk)
    return len(packed)


def read_header(path: str | Path) -> tuple[int, int, int]:
    """Return (version, dim, count) from a table file's header."""
    blob = Path(path).read_bytes()
    if len(blob) < 18 or blob[:4] != MAGIC:
        raise ExportError(f"{Path(path).name}: not an embedding table file")
    version, dim, count = struct.unpack("<HIQ", blob[4:18])
    return version, dim, count


def read_entries(path: str | Path) -> list[tuple[str, np.ndarray]]:
    """Read all (id, float32 vector) pairs; strict about trailing bytes."""
    blob = Path(path).read_bytes()
    version, dim, count = read_header(path)
    if version != VERSION:
        raise ExportError(f"{Path(path).name}: unsupported version {version}")
    offset = 18
    out: list[tuple[str, np.ndarray]] = []
    for _ in range(count):
        if offset + 2 > len(blob):
            raise ExportError(f"{Path(path).name}: truncated entry header")
        (id_len,) = struct.unpack("<H", blob[offset : offset + 2])
        offset += 2
        end = offset + id_len + 4 * dim
        if end > len(blob):
            raise ExportError(f"{Path(path).name}: truncated entry payload")
        key = blob[offset : offset + id_len].decode("utf-8")
        vec = np.frombuffer(blob[offset + id_len : end], dtype="<f4").copy()
        out.append((key, vec))
        offset = end
    if offset != len(blob):
        raise ExportError(f"{Path(path).name}: trailing bytes after {count} entries")
    return out
