"""Text-to-frame retrieval over embedding tables.

Ranking is exact cosine over the candidate list.  An optional projection
head maps both sides into a shared space first; ranking with a head is
identical to ranking pre-projected tables without one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from storyorder.data import EmbeddingTable
from storyorder.nn import lecun_init


@dataclass
class RetrievalHead:
    """Linear projections into a shared, normalized retrieval space."""

    input_dim: int
    shared_dim: int
    params: dict[str, np.ndarray]

    @classmethod
    def init(cls, input_dim: int, shared_dim: int, seed: int = 0) -> "RetrievalHead":
        rng = np.random.default_rng(seed)
        params = {
            "text.w": lecun_init(rng, input_dim, shared_dim),
            "text.b": np.zeros(shared_dim),
            "frame.w": lecun_init(rng, input_dim, shared_dim),
            "frame.b": np.zeros(shared_dim),
            "tau": np.array([0.07]),
        }
        return cls(input_dim=input_dim, shared_dim=shared_dim, params=params)

    def project_text(self, vecs: np.ndarray) -> np.ndarray:
        pre = vecs @ self.params["text.w"] + self.params["text.b"]
        return pre / np.maximum(np.linalg.norm(pre, axis=-1, keepdims=True), 1e-12)

    def project_frames(self, vecs: np.ndarray) -> np.ndarray:
        pre = vecs @ self.params["frame.w"] + self.params["frame.b"]
        return pre / np.maximum(np.linalg.norm(pre, axis=-1, keepdims=True), 1e-12)


@dataclass(frozen=True)
class RetrievalRanking:
    text_id: str
    ranked_ids: tuple[str, ...]
    scores: tuple[float, ...]


def retrieve_topk(
    text_id: str,
    candidate_ids: list[str],
    text_table: EmbeddingTable,
    frame_table: EmbeddingTable,
    k: int,
    head: RetrievalHead | None = None,
) -> RetrievalRanking:
    """Rank candidates by cosine similarity to the text; keep the top k.

    Ties resolve toward the lexicographically smaller frame id.  ``k`` may
    exceed the candidate count, in which case everything is returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(set(candidate_ids)) != len(candidate_ids):
        raise ValueError("candidate_ids contain duplicates")
    if not candidate_ids:
        return RetrievalRanking(text_id=text_id, ranked_ids=(), scores=())
    tvec = text_table.vector(text_id).astype(np.float64)
    fmat = frame_table.matrix(candidate_ids)
    if head is not None:
        tvec = head.project_text(tvec)
        fmat = head.project_frames(fmat)
    sims = fmat @ tvec
    order = sorted(range(len(candidate_ids)), key=lambda j: (-sims[j], candidate_ids[j]))
    top = order[: min(k, len(order))]
    return RetrievalRanking(
        text_id=text_id,
        ranked_ids=tuple(candidate_ids[j] for j in top),
        scores=tuple(float(sims[j]) for j in top),
    )


def project_table(table: EmbeddingTable, head: RetrievalHead, side: str) -> EmbeddingTable:
    """Apply one side of the head to a whole table."""
    if side not in ("text", "frame"):
        raise ValueError("side must be 'text' or 'frame'")
    project = head.project_text if side == "text" else head.project_frames
    out = EmbeddingTable(head.shared_dim)
    for key in table.ids():
        out.add(key, project(table.vector(key).astype(np.float64)))
    return out
