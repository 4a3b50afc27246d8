"""Similarity-based ordering baselines.

All five strategies rank the candidate pool with nothing but embedding
similarity: whole-text ranking, a sliding per-segment query, cumulative
prefix queries, exhaustive segmentation search with optimal assignment,
and beam search over cumulative queries.  They share the even-split text
segmentation rule and a pluggable segment embedder.
"""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np

from storyorder.data import EmbeddingTable
from storyorder.ordering import OrderingResult

Span = tuple[int, int]


def segment_text(text: str, m: int) -> list[Span]:
    """Split the token stream into m contiguous spans of near-equal size.

    Span lengths differ by at most one; earlier spans take the remainder
    (7 tokens into 3 spans gives lengths 3, 2, 2).  Spans are (start, end)
    token indices, end exclusive.
    """
    tokens = text.split()
    n = len(tokens)
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > n:
        raise ValueError(f"cannot split {n} tokens into {m} segments")
    base, rem = divmod(n, m)
    spans: list[Span] = []
    start = 0
    for t in range(m):
        size = base + (1 if t < rem else 0)
        spans.append((start, start + size))
        start += size
    return spans


class SegmentEmbedder(Protocol):
    def embed(self, text_id: str, span: Span) -> np.ndarray: ...


class TableSegmentEmbedder:
    """Segment embeddings backed by a text table.

    Prefers a precomputed entry keyed ``<text_id>#s<start>:<end>``; when a
    span has no direct entry, composes it as the renormalized mean of its
    single-token entries.  The same span always yields the same vector.
    """

    def __init__(self, text_table: EmbeddingTable):
        self.table = text_table

    def whole(self, text_id: str) -> np.ndarray:
        return self.table.vector(text_id).astype(np.float64)

    def embed(self, text_id: str, span: Span) -> np.ndarray:
        a, b = span
        if not (0 <= a < b):
            raise ValueError(f"bad span {span}")
        key = f"{text_id}#s{a}:{b}"
        if key in self.table:
            return self.table.vector(key).astype(np.float64)
        parts = []
        for j in range(a, b):
            sub = f"{text_id}#s{j}:{j + 1}"
            if sub not in self.table:
                raise KeyError(f"no embedding for span {key!r} (missing {sub!r})")
            parts.append(self.table.vector(sub).astype(np.float64))
        mean = np.mean(parts, axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ValueError(f"span {key!r} embeds to a zero vector")
        return mean / norm


def _greedy_pick(queries: np.ndarray, candidate_ids: list[str], frames: np.ndarray) -> OrderingResult:
    """Pick-and-remove: each query claims its best remaining candidate."""
    remaining = list(range(len(candidate_ids)))
    chosen: list[int] = []
    scores: list[float] = []
    for q in queries:
        sims = frames[remaining] @ q
        best = min(range(len(remaining)), key=lambda j: (-sims[j], candidate_ids[remaining[j]]))
        chosen.append(remaining[best])
        scores.append(float(sims[best]))
        remaining.pop(best)
    return OrderingResult(
        ordered_ids=tuple(candidate_ids[j] for j in chosen),
        stopped_by_eos=False,
        scores=tuple(scores),
    )


def order_naive(
    text_id: str,
    candidate_ids: list[str],
    text_table: EmbeddingTable,
    frame_table: EmbeddingTable,
) -> OrderingResult:
    """Sort candidates by similarity to the whole-text embedding."""
    if len(set(candidate_ids)) != len(candidate_ids):
        raise ValueError("candidate pool contains duplicate ids")
    if not candidate_ids:
        return OrderingResult(ordered_ids=(), stopped_by_eos=False, scores=())
    tvec = text_table.vector(text_id).astype(np.float64)
    frames = frame_table.matrix(candidate_ids)
    sims = frames @ tvec
    order = sorted(range(len(candidate_ids)), key=lambda j: (-sims[j], candidate_ids[j]))
    return OrderingResult(
        ordered_ids=tuple(candidate_ids[j] for j in order),
        stopped_by_eos=False,
        scores=tuple(float(sims[j]) for j in order),
    )


def _segment_queries(
    synopsis_text: str, text_id: str, m: int, embedder: SegmentEmbedder
) -> np.ndarray:
    spans = segment_text(synopsis_text, m)
    return np.stack([embedder.embed(text_id, span) for span in spans])


def order_sliding(
    synopsis_text: str,
    text_id: str,
    candidate_ids: list[str],
    embedder: SegmentEmbedder,
    frame_table: EmbeddingTable,
) -> OrderingResult:
    """Segment t queries the pool directly; picked frames leave the pool."""
    if not candidate_ids:
        return OrderingResult(ordered_ids=(), stopped_by_eos=False, scores=())
    queries = _segment_queries(synopsis_text, text_id, len(candidate_ids), embedder)
    return _greedy_pick(queries, candidate_ids, frame_table.matrix(candidate_ids))


def _cumulative_queries(segments: np.ndarray) -> np.ndarray:
    sums = np.cumsum(segments, axis=0)
    means = sums / np.arange(1, segments.shape[0] + 1)[:, None]
    norms = np.maximum(np.linalg.norm(means, axis=1, keepdims=True), 1e-12)
    return means / norms


def order_cumulative(
    synopsis_text: str,
    text_id: str,
    candidate_ids: list[str],
    embedder: SegmentEmbedder,
    frame_table: EmbeddingTable,
) -> OrderingResult:
    """Step t queries with the normalized mean of segments 1..t."""
    if not candidate_ids:
        return OrderingResult(ordered_ids=(), stopped_by_eos=False, scores=())
    segments = _segment_queries(synopsis_text, text_id, len(candidate_ids), embedder)
    return _greedy_pick(_cumulative_queries(segments), candidate_ids, frame_table.matrix(candidate_ids))


def order_contextual(
    synopsis_text: str,
    text_id: str,
    candidate_ids: list[str],
    embedder: SegmentEmbedder,
    frame_table: EmbeddingTable,
    beam_width: int = 5,
) -> OrderingResult:
    """Beam search over cumulative queries.

    Beams accumulate total similarity; ties prefer the lexicographically
    smaller id sequence, so width 1 reproduces the cumulative baseline.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if not candidate_ids:
        return OrderingResult(ordered_ids=(), stopped_by_eos=False, scores=())
    m = len(candidate_ids)
    segments = _segment_queries(synopsis_text, text_id, m, embedder)
    queries = _cumulative_queries(segments)
    frames = frame_table.matrix(candidate_ids)
    sims_all = frames @ queries.T  # (candidates, steps)

    # beam entries: (chosen index tuple, remaining indices, total, scores)
    beams: list[tuple[tuple[int, ...], list[int], float, tuple[float, ...]]] = [
        ((), list(range(m)), 0.0, ())
    ]
    for t in range(m):
        expanded = []
        for chosen, remaining, total, scores in beams:
            for j in remaining:
                expanded.append(
                    (
                        chosen + (j,),
                        [r for r in remaining if r != j],
                        total + float(sims_all[j, t]),
                        scores + (float(sims_all[j, t]),),
                    )
                )
        expanded.sort(key=lambda e: (-e[2], tuple(candidate_ids[j] for j in e[0])))
        beams = expanded[:beam_width]
    chosen, _, _, scores = beams[0]
    return OrderingResult(
        ordered_ids=tuple(candidate_ids[j] for j in chosen),
        stopped_by_eos=False,
        scores=scores,
    )


# ------------------------------------------------- segmentation search


def count_segmentations(n_tokens: int, m: int) -> int:
    return math.comb(n_tokens - 1, m - 1)


def enumerate_segmentations(
    n_tokens: int, m: int, limit: int, seed: int = 0
) -> list[tuple[Span, ...]]:
    """All ways to cut n tokens into m contiguous non-empty spans.

    When the full count exceeds ``limit``, a seeded sampler draws distinct
    segmentations uniformly; growing the limit with the same seed extends
    the returned list without changing its prefix.
    """
    if m < 1 or m > n_tokens:
        raise ValueError(f"cannot cut {n_tokens} tokens into {m} spans")
    if limit < 1:
        raise ValueError("limit must be >= 1")

    def cuts_to_spans(cuts: tuple[int, ...]) -> tuple[Span, ...]:
        bounds = (0,) + cuts + (n_tokens,)
        return tuple((bounds[i], bounds[i + 1]) for i in range(m))

    total = count_segmentations(n_tokens, m)
    if total <= limit:
        from itertools import combinations

        return [cuts_to_spans(c) for c in combinations(range(1, n_tokens), m - 1)]

    rng = np.random.default_rng(seed)
    seen: set[tuple[int, ...]] = set()
    out: list[tuple[Span, ...]] = []
    while len(out) < limit:
        cuts = tuple(sorted(rng.choice(np.arange(1, n_tokens), size=m - 1, replace=False).tolist()))
        if cuts in seen:
            continue
        seen.add(cuts)
        out.append(cuts_to_spans(cuts))
    return out


def _hungarian_min(cost: np.ndarray) -> tuple[list[int], float]:
    """Exact square assignment minimizing total cost, O(n^3)."""
    n = cost.shape[0]
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assignment = [0] * n
    for j in range(1, n + 1):
        if p[j]:
            assignment[p[j] - 1] = j - 1
    total = float(sum(cost[i, assignment[i]] for i in range(n)))
    return assignment, total


_TIE_TOL = 1e-9


def bipartite_match(sim: np.ndarray) -> tuple[list[int], float]:
    """Maximum-total-similarity assignment on a square matrix.

    Returns (cols, total) where cols[r] is the column matched to row r.
    Among equally good assignments the lexicographically smallest column
    sequence wins (equality up to a 1e-9 tolerance).
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"bipartite_match needs a square matrix, got {sim.shape}")
    n = sim.shape[0]
    if n == 0:
        return [], 0.0
    _, neg_total = _hungarian_min(-sim)
    best_total = -neg_total

    fixed: list[int] = []
    free_cols = list(range(n))
    prefix_total = 0.0
    for r in range(n):
        for c in sorted(free_cols):
            rest_rows = list(range(r + 1, n))
            rest_cols = [x for x in free_cols if x != c]
            rest_total = 0.0
            if rest_rows:
                sub = sim[np.ix_(rest_rows, rest_cols)]
                _, neg = _hungarian_min(-sub)
                rest_total = -neg
            if prefix_total + sim[r, c] + rest_total >= best_total - _TIE_TOL:
                fixed.append(c)
                free_cols.remove(c)
                prefix_total += float(sim[r, c])
                break
        else:
            raise RuntimeError("assignment search failed to extend a prefix")
    return fixed, best_total


def order_dynamic(
    synopsis_text: str,
    text_id: str,
    candidate_ids: list[str],
    embedder: SegmentEmbedder,
    frame_table: EmbeddingTable,
    limit: int = 10000,
    seed: int = 0,
) -> OrderingResult:
    """Search segmentations; order by the best optimal assignment.

    Every enumerated segmentation is scored by its maximum-total bipartite
    assignment between segment and frame embeddings; the first
    segmentation reaching the best total wins, and its lexicographically
    smallest optimal assignment gives the frame order.
    """
    if not candidate_ids:
        return OrderingResult(ordered_ids=(), stopped_by_eos=False, scores=())
    m = len(candidate_ids)
    tokens = synopsis_text.split()
    if m > len(tokens):
        raise ValueError(f"pool of {m} frames exceeds the {len(tokens)} synopsis tokens")
    frames = frame_table.matrix(candidate_ids)

    span_cache: dict[Span, np.ndarray] = {}

    def span_vec(span: Span) -> np.ndarray:
        if span not in span_cache:
            span_cache[span] = embedder.embed(text_id, span)
        return span_cache[span]

    best_total = -np.inf
    best_sim: np.ndarray | None = None
    for segmentation in enumerate_segmentations(len(tokens), m, limit, seed=seed):
        seg_mat = np.stack([span_vec(s) for s in segmentation])
        sim = seg_mat @ frames.T
        _, neg = _hungarian_min(-sim)
        if -neg > best_total + _TIE_TOL:
            best_total = -neg
            best_sim = sim
    cols, _ = bipartite_match(best_sim)
    return OrderingResult(
        ordered_ids=tuple(candidate_ids[c] for c in cols),
        stopped_by_eos=False,
        scores=tuple(float(best_sim[r, c]) for r, c in enumerate(cols)),
    )
