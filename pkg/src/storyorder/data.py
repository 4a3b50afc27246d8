"""Dataset store: storyboard examples, embedding tables, splits.

Embedding tables live on disk in a small binary format (magic ``TVSE``)
holding float32 unit vectors keyed by string id.  Examples live in JSONL.
Both loaders validate eagerly so downstream code can assume clean data.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EMBED_MAGIC = b"TVSE"
EMBED_VERSION = 1

# Vectors whose norm is already this close to 1 are kept bit-identical on
# load; anything further out is renormalized.  The gap between this and the
# 1e-4 public tolerance absorbs float32 rounding so that save/load/save
# round-trips are byte-stable.
_NORM_SKIP_TOL = 1e-5
UNIT_TOL = 1e-4

MIN_FRAMES = 2
MAX_FRAMES = 20


class DataFormatError(ValueError):
    """Raised when a file on disk violates the storage contract."""


def _as_unit_f32(vec: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float32)
    if v.ndim != 1:
        raise DataFormatError(f"{what}: expected a 1-d vector, got shape {v.shape}")
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm < 1e-8:
        raise DataFormatError(f"{what}: zero vector cannot be normalized")
    if abs(norm - 1.0) <= _NORM_SKIP_TOL:
        return v
    return (v.astype(np.float64) / norm).astype(np.float32)


class EmbeddingTable:
    """Immutable-by-convention map from string id to a unit float32 vector."""

    def __init__(self, dim: int, vectors: dict[str, np.ndarray] | None = None):
        if dim < 1:
            raise DataFormatError(f"embedding dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self._vectors: dict[str, np.ndarray] = {}
        if vectors:
            for key, vec in vectors.items():
                self.add(key, vec)

    def add(self, key: str, vec: np.ndarray) -> None:
        if key in self._vectors:
            raise DataFormatError(f"duplicate embedding id: {key!r}")
        v = _as_unit_f32(vec, f"embedding {key!r}")
        if v.shape[0] != self.dim:
            raise DataFormatError(
                f"embedding {key!r} has dim {v.shape[0]}, table dim is {self.dim}"
            )
        self._vectors[key] = v

    def vector(self, key: str) -> np.ndarray:
        try:
            return self._vectors[key]
        except KeyError:
            raise KeyError(f"embedding id not found: {key!r}") from None

    def matrix(self, keys: Sequence[str]) -> np.ndarray:
        """Stack the given ids into an (n, dim) float64 matrix."""
        if not keys:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.stack([self.vector(k) for k in keys]).astype(np.float64)

    def ids(self) -> list[str]:
        return list(self._vectors.keys())

    def __contains__(self, key: str) -> bool:
        return key in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Write a table to the binary format: header then (id, vector) entries.

    Layout, all little-endian: magic ``TVSE``, u16 version, u32 dim,
    u64 count, then per entry u16 id byte-length, the UTF-8 id bytes and
    dim float32 values.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<HIQ", EMBED_VERSION, table.dim, len(table)))
        for key in table.ids():
            raw = key.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise DataFormatError(f"embedding id too long: {key[:32]!r}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(table.vector(key).tobytes())


def load_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    blob = path.read_bytes()
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise DataFormatError(
                f"{path.name}: truncated while reading {what} at byte offset {offset}"
            )
        chunk = blob[offset : offset + n]
        offset += n
        return chunk

    if take(4, "magic") != EMBED_MAGIC:
        raise DataFormatError(f"{path.name}: bad magic, not an embedding file")
    version, dim, count = struct.unpack("<HIQ", take(14, "header"))
    if version != EMBED_VERSION:
        raise DataFormatError(f"{path.name}: unsupported version {version}")
    table = EmbeddingTable(dim)
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2, "id length"))
        key = take(id_len, "id bytes").decode("utf-8")
        vec = np.frombuffer(take(4 * dim, f"vector for {key!r}"), dtype="<f4")
        table.add(key, vec)
    if offset != len(blob):
        raise DataFormatError(
            f"{path.name}: {len(blob) - offset} trailing bytes after {count} entries"
        )
    return table


@dataclass(frozen=True)
class StoryboardExample:
    """One synopsis paired with its ordered ground-truth keyframes.

    ``gt_variants`` always contains the canonical order first; extra
    variants record alternative orderings judged equally valid.
    """

    example_id: str
    movie_id: str
    synopsis_text: str
    text_id: str
    frame_ids: tuple[str, ...]
    gt_variants: tuple[tuple[str, ...], ...] = field(default=())

    def __post_init__(self):
        n = len(self.frame_ids)
        if not (MIN_FRAMES <= n <= MAX_FRAMES):
            raise ValueError(
                f"example {self.example_id!r}: {n} frames, expected {MIN_FRAMES}..{MAX_FRAMES}"
            )
        if len(set(self.frame_ids)) != n:
            raise ValueError(f"example {self.example_id!r}: duplicate frame ids")
        canonical = tuple(self.frame_ids)
        variants = [canonical]
        for var in self.gt_variants:
            var = tuple(var)
            if sorted(var) != sorted(canonical):
                raise ValueError(
                    f"example {self.example_id!r}: gt variant is not a permutation of frame_ids"
                )
            if var not in variants:
                variants.append(var)
        object.__setattr__(self, "gt_variants", tuple(variants))


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[StoryboardExample, ...]
    val: tuple[StoryboardExample, ...]
    test: tuple[StoryboardExample, ...]

    def all_examples(self) -> tuple[StoryboardExample, ...]:
        return self.train + self.val + self.test


def _example_to_obj(ex: StoryboardExample) -> dict:
    return {
        "example_id": ex.example_id,
        "movie_id": ex.movie_id,
        "synopsis_text": ex.synopsis_text,
        "text_id": ex.text_id,
        "frame_ids": list(ex.frame_ids),
        "gt_variants": [list(v) for v in ex.gt_variants],
    }


def _example_from_obj(obj: dict, where: str) -> StoryboardExample:
    required = ["example_id", "movie_id", "synopsis_text", "text_id", "frame_ids"]
    missing = [k for k in required if k not in obj]
    if missing:
        raise DataFormatError(f"{where}: missing fields {missing}")
    return StoryboardExample(
        example_id=obj["example_id"],
        movie_id=obj["movie_id"],
        synopsis_text=obj["synopsis_text"],
        text_id=obj["text_id"],
        frame_ids=tuple(obj["frame_ids"]),
        gt_variants=tuple(tuple(v) for v in obj.get("gt_variants", [])),
    )


def save_dataset(examples: Iterable[StoryboardExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(_example_to_obj(ex), sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> list[StoryboardExample]:
    path = Path(path)
    out: list[StoryboardExample] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path.name}:{lineno}: invalid JSON ({exc})") from None
            try:
                ex = _example_from_obj(obj, f"{path.name}:{lineno}")
            except ValueError as exc:
                raise DataFormatError(f"{path.name}:{lineno}: {exc}") from None
            if ex.example_id in seen:
                raise DataFormatError(f"{path.name}:{lineno}: duplicate example_id {ex.example_id!r}")
            seen.add(ex.example_id)
            out.append(ex)
    return out


def validate_references(
    examples: Iterable[StoryboardExample],
    text_table: EmbeddingTable,
    frame_table: EmbeddingTable,
) -> None:
    """Ensure every text and frame id used by the examples is present."""
    for ex in examples:
        if ex.text_id not in text_table:
            raise KeyError(f"example {ex.example_id!r}: text id not found: {ex.text_id!r}")
        for fid in ex.frame_ids:
            if fid not in frame_table:
                raise KeyError(f"example {ex.example_id!r}: frame id not found: {fid!r}")


def split_dataset(
    examples: Sequence[StoryboardExample],
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetSplit:
    """Partition examples into movie-disjoint train/val/test splits.

    Whole movies are assigned to splits, so split sizes can deviate from
    the exact ratio targets by at most one movie group.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"ratios must be three non-negative numbers, got {ratios}")
    total = float(sum(ratios))
    ratios = (ratios[0] / total, ratios[1] / total, ratios[2] / total)

    by_movie: dict[str, list[StoryboardExample]] = {}
    for ex in examples:
        by_movie.setdefault(ex.movie_id, []).append(ex)
    movies = sorted(by_movie.keys())
    needed = sum(1 for r in ratios if r > 0)
    if len(movies) < needed:
        raise ValueError(
            f"cannot split {len(movies)} distinct movies across {needed} non-empty splits"
        )

    rng = np.random.default_rng(seed)
    rng.shuffle(movies)

    n = len(examples)
    targets = [r * n for r in ratios]
    counts = [0, 0, 0]
    buckets: tuple[list, list, list] = ([], [], [])
    for movie in movies:
        group = by_movie[movie]
        # Send the whole movie to the split currently lagging its target most.
        deficits = [
            (targets[i] - counts[i]) if ratios[i] > 0 else float("-inf") for i in range(3)
        ]
        dest = int(np.argmax(deficits))
        buckets[dest].extend(group)
        counts[dest] += len(group)
    return DatasetSplit(train=tuple(buckets[0]), val=tuple(buckets[1]), test=tuple(buckets[2]))
