"""Evaluation: rank correlation, retrieval metrics, pools and reports.

Two protocols share this module.  Oracle ordering permutes the exact
ground-truth frame set and is scored by Kendall's tau against the best
matching ground-truth variant.  Retrieve-and-order first retrieves K
frames from a large pool, orders them, and is scored by recall plus the
tau of the retrieved ground-truth subset, with their product as the
headline number.
"""

from __future__ import annotations

import json
from bisect import bisect_right, insort
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from storyorder.data import StoryboardExample

BUCKETS: tuple[tuple[int, int], ...] = ((3, 5), (6, 11))

# Published results on the real movie benchmark, kept in reports as
# context for the synthetic numbers produced here.
REFERENCE_ORDERING = {
    "naive": 0.183,
    "sliding": 0.230,
    "cumulative": 0.244,
    "dynamic": 0.218,
    "contextual": 0.241,
    "rerank": 0.192,
    "vq_trans": 0.367,
    "human": 0.821,
}
REFERENCE_RETRIEVE_ORDER_PRODUCT = {20: 0.300, 30: 0.219}
REFERENCE_RETRIEVAL_RECALL = {
    "zero_shot": {1: 0.0573, 5: 0.1972, 10: 0.2898, 30: 0.4690},
    "trained": {1: 0.0762, 5: 0.2599, 10: 0.3818, 30: 0.5819},
}


def _count_inversions(seq: Sequence[int]) -> int:
    seen: list[int] = []
    inversions = 0
    for value in seq:
        pos = bisect_right(seen, value)
        inversions += len(seen) - pos
        insort(seen, value)
    return inversions


def kendall_tau(predicted_ids: Sequence[str], gt_ids: Sequence[str]) -> float:
    """Kendall's tau between two orderings of the same id set.

    tau = 1 - 2 * inversions / (m * (m - 1) / 2); identity gives 1.0, the
    full reversal gives -1.0.  Requires m >= 2 and identical id sets.
    """
    m = len(gt_ids)
    if m < 2:
        raise ValueError("kendall_tau needs at least 2 items")
    if len(predicted_ids) != m or set(predicted_ids) != set(gt_ids):
        raise ValueError("predicted ids and ground-truth ids are not the same set")
    rank_in_pred = {fid: r for r, fid in enumerate(predicted_ids)}
    seq = [rank_in_pred[fid] for fid in gt_ids]
    inversions = _count_inversions(seq)
    return 1.0 - 2.0 * inversions / (m * (m - 1) / 2.0)


def tau_best(predicted_ids: Sequence[str], gt_variants: Sequence[Sequence[str]]) -> float:
    """Best tau over all accepted ground-truth orderings."""
    if not gt_variants:
        raise ValueError("gt_variants must not be empty")
    return max(kendall_tau(predicted_ids, variant) for variant in gt_variants)


def recall_at_k(ranked_ids: Sequence[str], relevant_ids: Iterable[str], k: int) -> float:
    """Fraction of relevant ids appearing among the top k ranked ids."""
    if k <= 0:
        raise ValueError("k must be > 0")
    relevant = set(relevant_ids)
    if not relevant:
        raise ValueError("relevant_ids must not be empty")
    top = list(ranked_ids)[:k]
    if len(set(top)) != len(top):
        raise ValueError("ranked_ids contain duplicates")
    return len(relevant.intersection(top)) / len(relevant)


@dataclass(frozen=True)
class RetrieveOrderScore:
    recall: float
    tau: float

    @property
    def product(self) -> float:
        return self.recall * self.tau


def retrieve_and_order_score(
    ordered_ids: Sequence[str],
    gt_variants: Sequence[Sequence[str]],
    k: int,
) -> RetrieveOrderScore:
    """Score one retrieve-and-order prediction.

    ``ordered_ids`` is the ordered list of retrieved frames (at most k).
    Recall counts retrieved ground-truth frames; tau compares the order of
    that subset against its best ground-truth variant, defined as 1.0
    when fewer than two ground-truth frames were retrieved.
    """
    if k <= 0:
        raise ValueError("k must be > 0")
    if not gt_variants:
        raise ValueError("gt_variants must not be empty")
    if len(set(ordered_ids)) != len(ordered_ids):
        raise ValueError("ordered_ids contain duplicates")
    if len(ordered_ids) > k:
        raise ValueError(f"got {len(ordered_ids)} ordered ids for k={k}")
    gt_set = set(gt_variants[0])
    hit_pred = [fid for fid in ordered_ids if fid in gt_set]
    recall = len(hit_pred) / len(gt_set)
    if len(hit_pred) < 2:
        return RetrieveOrderScore(recall=recall, tau=1.0)
    hit_set = set(hit_pred)
    taus = []
    for variant in gt_variants:
        ref = [fid for fid in variant if fid in hit_set]
        taus.append(kendall_tau(hit_pred, ref))
    return RetrieveOrderScore(recall=recall, tau=max(taus))


def build_candidate_pool(
    example: StoryboardExample,
    corpus_frame_ids: Iterable[str],
    pool_size: int,
    seed: int,
) -> list[str]:
    """Ground-truth frames plus seeded distractors, shuffled.

    Distractors are drawn without replacement from the corpus minus the
    example's own frames; the result is deterministic per seed.
    """
    gt = list(example.frame_ids)
    if pool_size < len(gt):
        raise ValueError(f"pool_size {pool_size} is smaller than the {len(gt)} gt frames")
    others = sorted(set(corpus_frame_ids) - set(gt))
    needed = pool_size - len(gt)
    if needed > len(others):
        raise ValueError(
            f"corpus has only {len(others)} distractor frames, need {needed}"
        )
    rng = np.random.default_rng(seed)
    picked = list(rng.choice(np.array(others, dtype=object), size=needed, replace=False)) if needed else []
    pool = gt + [str(x) for x in picked]
    rng.shuffle(pool)
    return pool


def bucket_report(
    lengths: Sequence[int], values: Sequence[float]
) -> dict[str, dict[str, float]]:
    """Mean value per storyboard-length bucket."""
    if len(lengths) != len(values):
        raise ValueError("lengths and values differ in size")
    out: dict[str, dict[str, float]] = {}
    for lo, hi in BUCKETS:
        members = [v for n, v in zip(lengths, values) if lo <= n <= hi]
        label = f"{lo}-{hi}"
        if members:
            out[label] = {"count": len(members), "mean": float(np.mean(members))}
        else:
            out[label] = {"count": 0, "mean": float("nan")}
    return out


@dataclass(frozen=True)
class EvalReport:
    protocol: str
    method: str
    n_examples: int
    metrics: dict[str, float]
    buckets: dict[str, dict[str, float]] = field(default_factory=dict)
    reference: dict[str, float] = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "protocol": self.protocol,
            "method": self.method,
            "n_examples": self.n_examples,
            "metrics": self.metrics,
            "buckets": self.buckets,
            "reference": self.reference,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, raw: str) -> "EvalReport":
        obj = json.loads(raw)
        return cls(
            protocol=obj["protocol"],
            method=obj["method"],
            n_examples=obj["n_examples"],
            metrics=obj["metrics"],
            buckets=obj.get("buckets", {}),
            reference=obj.get("reference", {}),
        )


def evaluate_ordering(
    predictions: Mapping[str, Sequence[str]],
    examples: Sequence[StoryboardExample],
    method: str,
) -> EvalReport:
    """Score full-pool orderings: mean best tau, bucketed by length."""
    lengths: list[int] = []
    taus: list[float] = []
    for ex in examples:
        if ex.example_id not in predictions:
            raise KeyError(f"no prediction for example {ex.example_id!r}")
        taus.append(tau_best(predictions[ex.example_id], ex.gt_variants))
        lengths.append(len(ex.frame_ids))
    reference = {}
    if method in REFERENCE_ORDERING:
        reference["tau"] = REFERENCE_ORDERING[method]
    return EvalReport(
        protocol="ordering",
        method=method,
        n_examples=len(examples),
        metrics={"tau": float(np.mean(taus)) if taus else float("nan")},
        buckets=bucket_report(lengths, taus),
        reference=reference,
    )


def evaluate_retrieve_order(
    predictions: Mapping[str, Sequence[str]],
    examples: Sequence[StoryboardExample],
    k: int,
    method: str,
) -> EvalReport:
    """Score retrieve-and-order predictions at cutoff k."""
    lengths: list[int] = []
    recalls: list[float] = []
    taus: list[float] = []
    for ex in examples:
        if ex.example_id not in predictions:
            raise KeyError(f"no prediction for example {ex.example_id!r}")
        score = retrieve_and_order_score(predictions[ex.example_id], ex.gt_variants, k)
        recalls.append(score.recall)
        taus.append(score.tau)
        lengths.append(len(ex.frame_ids))
    recall_mean = float(np.mean(recalls)) if recalls else float("nan")
    tau_mean = float(np.mean(taus)) if taus else float("nan")
    reference = {}
    if k in REFERENCE_RETRIEVE_ORDER_PRODUCT:
        reference["product"] = REFERENCE_RETRIEVE_ORDER_PRODUCT[k]
    return EvalReport(
        protocol="retrieve_order",
        method=method,
        n_examples=len(examples),
        metrics={
            "recall_at_k": recall_mean,
            "tau_at_k": tau_mean,
            "product": recall_mean * tau_mean,
            "k": float(k),
        },
        buckets=bucket_report(lengths, taus),
        reference=reference,
    )


def evaluate_retrieval(
    rankings: Mapping[str, Sequence[str]],
    examples: Sequence[StoryboardExample],
    ks: Sequence[int],
    method: str,
) -> EvalReport:
    """Score frame retrieval: mean recall at each cutoff in ``ks``.

    ``rankings`` maps example ids to ranked candidate frame ids; recall is
    measured against each example's ground-truth frame set.
    """
    if not ks or any(k <= 0 for k in ks):
        raise ValueError("ks must be positive cutoffs")
    per_k: dict[int, list[float]] = {k: [] for k in ks}
    for ex in examples:
        if ex.example_id not in rankings:
            raise KeyError(f"no ranking for example {ex.example_id!r}")
        ranked = rankings[ex.example_id]
        for k in ks:
            per_k[k].append(recall_at_k(ranked, ex.frame_ids, k))
    metrics = {
        f"recall@{k}": (float(np.mean(vals)) if vals else float("nan"))
        for k, vals in per_k.items()
    }
    ref_row = REFERENCE_RETRIEVAL_RECALL.get(method, {})
    reference = {f"recall@{k}": ref_row[k] for k in ks if k in ref_row}
    return EvalReport(
        protocol="retrieval",
        method=method,
        n_examples=len(examples),
        metrics=metrics,
        reference=reference,
    )


def render_report_text(reports: Sequence[EvalReport]) -> str:
    """Plain-text table over one or more reports of the same protocol."""
    if not reports:
        return "(no reports)\n"
    protocol = reports[0].protocol
    lines = []
    if protocol == "retrieval":
        ks = sorted(
            int(name.split("@", 1)[1])
            for name in reports[0].metrics
            if name.startswith("recall@")
        )
        header = f"{'method':<14}" + "".join(f"{f'R@{k}':>9}" for k in ks) + f"{'n':>7}"
        lines.append(header)
        lines.append("-" * len(header))
        for rep in reports:
            row = f"{rep.method:<14}"
            row += "".join(f"{rep.metrics[f'recall@{k}']:>9.3f}" for k in ks)
            row += f"{rep.n_examples:>7d}"
            lines.append(row)
            if rep.reference:
                ref_row = f"{'  (reference)':<14}"
                ref_row += "".join(
                    f"{rep.reference.get(f'recall@{k}', float('nan')):>9.3f}" for k in ks
                )
                ref_row += f"{'':>7}"
                lines.append(ref_row)
        lines.append("")
        lines.append("reference: published results on the real movie benchmark")
        return "\n".join(lines) + "\n"
    if protocol == "ordering":
        header = f"{'method':<14}{'tau':>8}{'[3-5]':>9}{'[6-11]':>9}{'n':>7}{'reference':>11}"
        lines.append(header)
        lines.append("-" * len(header))
        for rep in reports:
            b35 = rep.buckets.get("3-5", {}).get("mean", float("nan"))
            b611 = rep.buckets.get("6-11", {}).get("mean", float("nan"))
            ref = rep.reference.get("tau")
            lines.append(
                f"{rep.method:<14}{rep.metrics['tau']:>8.3f}{b35:>9.3f}{b611:>9.3f}"
                f"{rep.n_examples:>7d}{(f'{ref:.3f}' if ref is not None else '-'):>11}"
            )
        lines.append("")
        lines.append("reference: published results on the real movie benchmark")
    else:
        header = (
            f"{'method':<14}{'K':>4}{'R@K':>8}{'tau@K':>8}{'product':>9}{'n':>7}{'reference':>11}"
        )
        lines.append(header)
        lines.append("-" * len(header))
        for rep in reports:
            ref = rep.reference.get("product")
            lines.append(
                f"{rep.method:<14}{int(rep.metrics['k']):>4d}{rep.metrics['recall_at_k']:>8.3f}"
                f"{rep.metrics['tau_at_k']:>8.3f}{rep.metrics['product']:>9.3f}"
                f"{rep.n_examples:>7d}{(f'{ref:.3f}' if ref is not None else '-'):>11}"
            )
        lines.append("")
        lines.append("reference: published product metric on the real movie benchmark")
    return "\n".join(lines) + "\n"
