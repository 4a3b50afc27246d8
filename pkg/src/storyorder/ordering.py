"""Inference: turn a text plus a candidate frame pool into an ordering.

The trained orderer decodes greedily: at each step it predicts a code
vector, picks the most similar remaining candidate, appends that frame's
quantized token to its own prefix and deletes the frame from the pool.  A
stop decision fires when the learned stop embedding outscores every
remaining frame, where allowed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from storyorder.data import EmbeddingTable
from storyorder.model import OrdererModel, RerankModel
from storyorder.nn import softmax_last
from storyorder.vq import Codebook, quantize_detailed


@dataclass(frozen=True)
class OrderingResult:
    ordered_ids: tuple[str, ...]
    stopped_by_eos: bool
    scores: tuple[float, ...]


def _check_pool(candidate_ids: list[str]) -> None:
    if len(set(candidate_ids)) != len(candidate_ids):
        raise ValueError("candidate pool contains duplicate ids")


def order_vq_trans(
    model: OrdererModel,
    codebook: Codebook | None,
    text_id: str,
    candidate_ids: list[str],
    text_table: EmbeddingTable,
    frame_table: EmbeddingTable,
    max_steps: int | None = None,
    allow_eos: bool = True,
) -> OrderingResult:
    """Greedy decode over the candidate pool.

    Candidates enter code space through the frame encoder and, when the
    model uses a codebook, through quantization.  ``max_steps`` defaults
    to the pool size; similarity ties resolve toward the lower frame id.
    With ``allow_eos`` off, decoding runs until the pool (or the step
    budget) is exhausted.
    """
    _check_pool(candidate_ids)
    if not candidate_ids:
        return OrderingResult(ordered_ids=(), stopped_by_eos=False, scores=())
    if max_steps is None:
        max_steps = len(candidate_ids)
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")

    text_vec = text_table.vector(text_id).astype(np.float64)[None, :]
    feats = frame_table.matrix(candidate_ids)
    z, _ = model.encode_frames(feats)
    if model.config.use_vq and codebook is not None:
        tokens = quantize_detailed(codebook, z)["codes"]
    else:
        tokens = z
    eos = model.params["eos"]

    remaining = list(range(len(candidate_ids)))
    chosen: list[int] = []
    scores: list[float] = []
    stopped = False
    for _ in range(max_steps):
        if not remaining:
            break
        prefix = tokens[chosen] if chosen else np.zeros((0, model.config.code_dim))
        preds, _ = model.forward_batch(text_vec[None, :, :], prefix[None, :, :])
        pred = preds[0, -1]
        sims = tokens[remaining] @ pred
        best = min(range(len(remaining)), key=lambda j: (-sims[j], candidate_ids[remaining[j]]))
        if allow_eos and float(eos @ pred) > float(sims[best]):
            stopped = True
            break
        chosen.append(remaining[best])
        scores.append(float(sims[best]))
        remaining.pop(best)
    return OrderingResult(
        ordered_ids=tuple(candidate_ids[j] for j in chosen),
        stopped_by_eos=stopped,
        scores=tuple(scores),
    )


def order_rerank(
    model: RerankModel,
    text_id: str,
    candidate_ids: list[str],
    text_table: EmbeddingTable,
    frame_table: EmbeddingTable,
) -> OrderingResult:
    """Assign every candidate a position by descending model confidence.

    The model emits one distribution over positions per candidate; the
    (candidate, position) pairs are claimed greedily without reuse, which
    always yields a permutation of the full pool.
    """
    _check_pool(candidate_ids)
    if not candidate_ids:
        return OrderingResult(ordered_ids=(), stopped_by_eos=False, scores=())
    m = len(candidate_ids)
    if m > model.config.max_frames:
        raise ValueError(f"pool size {m} exceeds model max_frames {model.config.max_frames}")
    pool = sorted(candidate_ids)
    text_vec = text_table.vector(text_id).astype(np.float64)[None, None, :]
    feats = frame_table.matrix(pool)[None, :, :]
    logits, _ = model.forward_batch(text_vec, feats)
    probs = softmax_last(logits[0, :, :m])

    pairs = sorted(
        ((j, t) for j in range(m) for t in range(m)),
        key=lambda jt: (-probs[jt[0], jt[1]], pool[jt[0]], jt[1]),
    )
    slot_used = [False] * m
    pos_used = [False] * m
    assigned: list[tuple[int, float]] = [(-1, 0.0)] * m
    placed = 0
    for j, t in pairs:
        if placed == m:
            break
        if slot_used[j] or pos_used[t]:
            continue
        slot_used[j] = True
        pos_used[t] = True
        assigned[t] = (j, float(probs[j, t]))
        placed += 1
    return OrderingResult(
        ordered_ids=tuple(pool[j] for j, _ in assigned),
        stopped_by_eos=False,
        scores=tuple(score for _, score in assigned),
    )
