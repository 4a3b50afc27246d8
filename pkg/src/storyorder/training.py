"""Training loops for the orderer, the retrieval head and the reranker.

The orderer objective is the sequence-prediction contrastive loss plus a
weighted quantizer loss.  Gradient routing follows the quantizer
contract: the straight-through estimator carries decoder gradients into
the frame encoder, the commitment term moves encoder features, and only
the codebook pulls move codes.  ``grad_check`` verifies every parameter
group against central finite differences of a surrogate loss in which the
probe point's code assignments and stop-gradient targets are frozen, so
the surrounding composite is differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from storyorder.data import EmbeddingTable, StoryboardExample
from storyorder.losses import align_training_loss, nce_training_loss, position_ce_loss
from storyorder.model import OrdererModel, RerankModel, _acc
from storyorder.nn import AdamW, linear, linear_back, lr_at, normalize_rows, normalize_rows_back
from storyorder.retrieval import RetrievalHead
from storyorder.vq import (
    Codebook,
    codebook_utilization,
    quantize_detailed,
    straight_through,
    straight_through_backward,
    vq_terms,
)

TAU_MIN = 1e-3
TAU_MAX = 1.0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 3e-4
    batch_size: int = 16
    weight_decay: float = 0.05
    warmup_frac: float = 0.1
    lambda_vq: float = 1.0
    seed: int = 0
    dead_code_patience: int = 300

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (in-batch negatives)")
        if self.epochs < 1 or self.lr <= 0:
            raise ValueError("epochs must be >= 1 and lr > 0")
        if not (0.0 <= self.warmup_frac < 1.0):
            raise ValueError("warmup_frac must be in [0, 1)")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"training diverged at step {step}: loss={value!r}")
        self.step = step
        self.value = value


@dataclass
class TrainResult:
    loss_curve: list[float] = field(default_factory=list)
    trans_curve: list[float] = field(default_factory=list)
    vq_curve: list[float] = field(default_factory=list)
    steps: int = 0
    used_fraction: float | None = None
    perplexity: float | None = None


# --------------------------------------------------------------- batches


@dataclass
class _Batch:
    text_feats: np.ndarray  # (B, n, input_dim)
    frames_flat: np.ndarray  # (F, input_dim), grouped by example, order kept
    ex_of_frame: np.ndarray  # (F,)
    pos_of_frame: np.ndarray  # (F,)
    m_list: np.ndarray  # (B,)
    m_max: int
    step_ex: np.ndarray  # (S,) sequence index per prediction step
    step_k: np.ndarray  # (S,) step position, m_i-th step is the stop step
    is_frame_step: np.ndarray  # (S,) bool


def _build_batch(text_feats: np.ndarray, frame_list: list[np.ndarray]) -> _Batch:
    ex_of_frame, pos_of_frame, step_ex, step_k, is_frame = [], [], [], [], []
    for i, frames in enumerate(frame_list):
        m = frames.shape[0]
        ex_of_frame.extend([i] * m)
        pos_of_frame.extend(range(m))
        step_ex.extend([i] * (m + 1))
        step_k.extend(range(m + 1))
        is_frame.extend([True] * m + [False])
    m_list = np.array([f.shape[0] for f in frame_list])
    return _Batch(
        text_feats=text_feats,
        frames_flat=np.concatenate(frame_list, axis=0),
        ex_of_frame=np.array(ex_of_frame),
        pos_of_frame=np.array(pos_of_frame),
        m_list=m_list,
        m_max=int(m_list.max()),
        step_ex=np.array(step_ex),
        step_k=np.array(step_k),
        is_frame_step=np.array(is_frame, dtype=bool),
    )


def _batch_from_examples(
    examples: list[StoryboardExample],
    text_table: EmbeddingTable,
    frame_table: EmbeddingTable,
) -> _Batch:
    text_feats = np.stack([text_table.vector(ex.text_id) for ex in examples]).astype(np.float64)
    frame_list = [frame_table.matrix(ex.frame_ids) for ex in examples]
    return _build_batch(text_feats[:, None, :], frame_list)


# ----------------------------------------------------------- loss core


def _frozen_vq_value(codebook: Codebook, z: np.ndarray, frozen: dict) -> float:
    """Quantizer loss with assignments and stopped operands pinned.

    Current parameters enter only where the analytic gradient flows:
    codes in the codebook pulls, features in the commitment term.
    """
    beta = codebook.beta
    z0 = frozen["z0"]
    c0 = frozen["codes0"]
    det = frozen["details"]
    value = beta * float(np.sum((z - c0) ** 2))
    if codebook.variant == "vanilla":
        value += float(np.sum((codebook.codes[det["indices"]] - z0) ** 2))
    elif codebook.variant == "multi_stage":
        for s in range(codebook.stages):
            picked = codebook.codes[s][det["indices"][:, s]]
            value += float(np.sum((picked - det["residuals"][:, s]) ** 2))
    elif codebook.variant == "soft":
        w = det["weights"]
        diffs = codebook.codes[None, :, :] - z0[:, None, :]
        value += float(np.sum(w * np.sum(diffs**2, axis=2)))
    elif codebook.variant == "hierarchical":
        for i in range(z0.shape[0]):
            p, c = int(det["indices"][i, 0]), int(det["indices"][i, 1])
            value += float(np.sum((codebook.parents[p] - z0[i]) ** 2))
            value += float(np.sum((codebook.children[p][c] - z0[i]) ** 2))
    else:
        raise ValueError(f"unknown codebook variant {codebook.variant!r}")
    return value


def _orderer_pass(
    model: OrdererModel,
    codebook: Codebook | None,
    batch: _Batch,
    lambda_vq: float,
    frozen: dict | None = None,
    want_grads: bool = True,
):
    """One loss evaluation, optionally with full analytic gradients.

    Returns (total, trans, vq_value, grads, code_grads, details); the last
    three are None when want_grads is False.
    """
    cfg = model.config
    p = model.params
    z, enc_cache = model.encode_frames(batch.frames_flat)
    use_vq = cfg.use_vq and codebook is not None

    details = None
    if use_vq:
        if frozen is None:
            details = quantize_detailed(codebook, z)
            st = straight_through(z, details["codes"])
        else:
            # Finite differences probe through this branch, so the frozen
            # offset form must stay literally differentiable in z.
            st = z + frozen["offset"]
    else:
        st = z

    batch_size = batch.text_feats.shape[0]
    frame_inputs = np.zeros((batch_size, batch.m_max, cfg.code_dim))
    frame_inputs[batch.ex_of_frame, batch.pos_of_frame] = st
    preds, fwd_cache = model.forward_batch(batch.text_feats, frame_inputs)

    preds_flat = preds[batch.step_ex, batch.step_k]
    targets = np.zeros((batch.step_ex.shape[0], cfg.code_dim))
    targets[batch.is_frame_step] = st
    targets[~batch.is_frame_step] = p["eos"]
    tau = float(p["tau"][0])
    trans, dpreds_flat, dtargets, dtau = nce_training_loss(
        preds_flat, targets, batch.is_frame_step, tau
    )

    vq_value = 0.0
    dz_commit = None
    code_grads: dict[int, np.ndarray] = {}
    if use_vq:
        if frozen is None:
            vq_value, dz_commit, code_grads = vq_terms(codebook, z, details)
        else:
            vq_value = _frozen_vq_value(codebook, z, frozen)
    total = trans + lambda_vq * vq_value
    if not want_grads:
        return total, trans, vq_value, None, None, details

    dpreds = np.zeros_like(preds)
    dpreds[batch.step_ex, batch.step_k] = dpreds_flat
    grads, d_frame_inputs = model.backward_batch(fwd_cache, dpreds)
    # Straight-through: both the decoder-input and the target-side
    # gradients of quantized values land on the encoder features.
    d_st = dtargets[batch.is_frame_step] + d_frame_inputs[batch.ex_of_frame, batch.pos_of_frame]
    _acc(grads, "eos", dtargets[~batch.is_frame_step].sum(axis=0))
    _acc(grads, "tau", np.array([dtau]))
    dz = straight_through_backward(d_st)
    if use_vq and dz_commit is not None:
        dz = dz + lambda_vq * dz_commit
    model.encode_frames_back(dz, enc_cache, grads)
    scaled_code_grads = {i: lambda_vq * g for i, g in code_grads.items()}
    return total, trans, vq_value, grads, scaled_code_grads, details


# -------------------------------------------------------------- orderer


def _usage_per_book(codebook: Codebook, details: dict) -> list[tuple[int, np.ndarray]]:
    if codebook.variant == "vanilla":
        return [(0, details["indices"])]
    if codebook.variant == "multi_stage":
        return [(s, details["indices"][:, s]) for s in range(codebook.stages)]
    if codebook.variant == "hierarchical":
        idx = details["indices"]
        out = [(0, idx[:, 0])]
        for p in np.unique(idx[:, 0]):
            out.append((1 + int(p), idx[idx[:, 0] == p, 1]))
        return out
    return []  # soft assigns every code a weight; nothing ever goes dead


def _reinit_source(codebook: Codebook, details: dict, z: np.ndarray, book_idx: int) -> np.ndarray:
    if codebook.variant == "multi_stage":
        return details["residuals"][:, book_idx]
    return z


def train_orderer(
    model: OrdererModel,
    codebook: Codebook | None,
    examples: list[StoryboardExample],
    text_table: EmbeddingTable,
    frame_table: EmbeddingTable,
    cfg: TrainConfig,
) -> TrainResult:
    """Fit the orderer (and codebook) in place; returns the loss curves.

    Raises TrainingDiverged with the failing step index if the loss stops
    being finite.
    """
    if len(examples) < cfg.batch_size:
        raise ValueError("not enough examples for one batch")
    use_vq = model.config.use_vq and codebook is not None
    if use_vq and codebook.code_dim != model.config.code_dim:
        raise ValueError("codebook.code_dim does not match model.code_dim")

    rng = np.random.default_rng(cfg.seed)
    all_params = dict(model.params)
    books = codebook.all_books() if use_vq else []
    for i, book in enumerate(books):
        all_params[f"cb.{i}"] = book
    opt = AdamW(
        all_params,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        no_decay=("cb.", "pos"),
    )
    last_used = [np.zeros(book.shape[0], dtype=np.int64) for book in books]

    n = len(examples)
    steps_per_epoch = sum(
        1 for s in range(0, n, cfg.batch_size) if min(n, s + cfg.batch_size) - s >= 2
    )
    total_steps = cfg.epochs * steps_per_epoch
    result = TrainResult()
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            chosen = order[start : start + cfg.batch_size]
            if chosen.shape[0] < 2:
                continue
            batch = _batch_from_examples([examples[j] for j in chosen], text_table, frame_table)
            total, trans, vq_value, grads, code_grads, details = _orderer_pass(
                model, codebook, batch, cfg.lambda_vq
            )
            if not np.isfinite(total):
                raise TrainingDiverged(step, total)
            for i, g in code_grads.items():
                grads[f"cb.{i}"] = g
            opt.step(grads, lr=lr_at(step, total_steps, cfg.lr, cfg.warmup_frac))

            model.params["tau"][:] = np.clip(model.params["tau"], TAU_MIN, TAU_MAX)
            model.params["eos"] /= np.linalg.norm(model.params["eos"])
            if use_vq:
                codebook.normalize_codes()
                for book_idx, used in _usage_per_book(codebook, details):
                    last_used[book_idx][np.unique(used)] = step
                z = None
                for book_idx, book in enumerate(books):
                    stale = np.where(step - last_used[book_idx] >= cfg.dead_code_patience)[0]
                    if stale.size == 0:
                        continue
                    if z is None:
                        z, _ = model.encode_frames(batch.frames_flat)
                    source = _reinit_source(codebook, details, z, book_idx)
                    picks = rng.integers(0, source.shape[0], size=stale.size)
                    fresh = source[picks]
                    fresh = fresh / np.maximum(np.linalg.norm(fresh, axis=1, keepdims=True), 1e-12)
                    book[stale] = fresh
                    opt.m[f"cb.{book_idx}"][stale] = 0.0
                    opt.v[f"cb.{book_idx}"][stale] = 0.0
                    last_used[book_idx][stale] = step

            result.loss_curve.append(float(total))
            result.trans_curve.append(float(trans))
            result.vq_curve.append(float(vq_value))
            step += 1
    result.steps = step

    if use_vq:
        sample = examples[: min(len(examples), 512)]
        feats = np.concatenate([frame_table.matrix(ex.frame_ids) for ex in sample], axis=0)
        z, _ = model.encode_frames(feats)
        details = quantize_detailed(codebook, z)
        if codebook.variant == "soft":
            indices = np.argmax(details["weights"], axis=1)
        elif codebook.variant == "vanilla":
            indices = details["indices"]
        else:
            indices = details["indices"][:, 0]
        size = codebook.parent_size if codebook.variant == "hierarchical" else codebook.size
        result.used_fraction, result.perplexity = codebook_utilization(indices, size)
    return result


# -------------------------------------------------------- retrieval head


def train_retrieval_head(
    examples: list[StoryboardExample],
    text_table: EmbeddingTable,
    frame_table: EmbeddingTable,
    shared_dim: int,
    cfg: TrainConfig,
) -> tuple[RetrievalHead, TrainResult]:
    """Fit projection heads with the symmetric alignment loss.

    Each epoch re-samples one positive frame per example; negatives are
    the rest of the batch.
    """
    head = RetrievalHead.init(text_table.dim, shared_dim, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    opt = AdamW(head.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(examples)
    if n < cfg.batch_size:
        raise ValueError("not enough examples for one batch")
    steps_per_epoch = sum(
        1 for s in range(0, n, cfg.batch_size) if min(n, s + cfg.batch_size) - s >= 2
    )
    total_steps = cfg.epochs * steps_per_epoch
    result = TrainResult()
    step = 0
    for _ in range(cfg.epochs):
        positives = [ex.frame_ids[rng.integers(len(ex.frame_ids))] for ex in examples]
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            chosen = order[start : start + cfg.batch_size]
            if chosen.shape[0] < 2:
                continue
            tx_raw = np.stack([text_table.vector(examples[j].text_id) for j in chosen]).astype(
                np.float64
            )
            fx_raw = np.stack([frame_table.vector(positives[j]) for j in chosen]).astype(np.float64)
            p = head.params
            tpre, ct = linear(tx_raw, p["text.w"], p["text.b"])
            tx, cnt = normalize_rows(tpre)
            fpre, cf = linear(fx_raw, p["frame.w"], p["frame.b"])
            fx, cnf = normalize_rows(fpre)
            tau = float(p["tau"][0])
            loss, dtx, dfx, dtau = align_training_loss(tx, fx, tau)
            if not np.isfinite(loss):
                raise TrainingDiverged(step, loss)
            grads: dict[str, np.ndarray] = {"tau": np.array([dtau])}
            dtpre = normalize_rows_back(dtx, cnt)
            _, dw, db = linear_back(dtpre, ct)
            grads["text.w"] = dw
            grads["text.b"] = db
            dfpre = normalize_rows_back(dfx, cnf)
            _, dw, db = linear_back(dfpre, cf)
            grads["frame.w"] = dw
            grads["frame.b"] = db
            opt.step(grads, lr=lr_at(step, total_steps, cfg.lr, cfg.warmup_frac))
            p["tau"][:] = np.clip(p["tau"], TAU_MIN, TAU_MAX)
            result.loss_curve.append(float(loss))
            step += 1
    result.steps = step
    return head, result


# --------------------------------------------------------------- rerank


def train_rerank(
    model: RerankModel,
    examples: list[StoryboardExample],
    text_table: EmbeddingTable,
    frame_table: EmbeddingTable,
    cfg: TrainConfig,
) -> TrainResult:
    """Fit the position-prediction reranker.

    Batches are bucketed by frame count so the bidirectional attention
    needs no padding; candidates are presented in a fresh random order
    every epoch so only content, not slot position, predicts the target.
    """
    buckets: dict[int, list[int]] = {}
    for j, ex in enumerate(examples):
        buckets.setdefault(len(ex.frame_ids), []).append(j)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    opt = AdamW(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay, no_decay=("pos",))

    batches_per_epoch = 0
    for members in buckets.values():
        for s in range(0, len(members), cfg.batch_size):
            if min(len(members), s + cfg.batch_size) - s >= 1:
                batches_per_epoch += 1
    total_steps = cfg.epochs * batches_per_epoch

    step = 0
    for _ in range(cfg.epochs):
        epoch_batches: list[list[int]] = []
        for m in sorted(buckets):
            members = np.array(buckets[m])
            rng.shuffle(members)
            for s in range(0, len(members), cfg.batch_size):
                epoch_batches.append(list(members[s : s + cfg.batch_size]))
        rng.shuffle(epoch_batches)
        for chosen in epoch_batches:
            exs = [examples[j] for j in chosen]
            m = len(exs[0].frame_ids)
            text_feats = np.stack([text_table.vector(ex.text_id) for ex in exs]).astype(
                np.float64
            )[:, None, :]
            frame_feats = np.zeros((len(exs), m, text_table.dim))
            target_pos = np.zeros((len(exs), m), dtype=np.int64)
            for i, ex in enumerate(exs):
                perm = rng.permutation(m)
                frame_feats[i] = frame_table.matrix([ex.frame_ids[k] for k in perm])
                target_pos[i] = perm
            logits, cache = model.forward_batch(text_feats, frame_feats)
            loss, dlogits = position_ce_loss(
                logits, target_pos, np.ones_like(target_pos, dtype=bool)
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(step, loss)
            grads = model.backward_batch(cache, dlogits)
            opt.step(grads, lr=lr_at(step, total_steps, cfg.lr, cfg.warmup_frac))
            result.loss_curve.append(float(loss))
            step += 1
    result.steps = step
    return result


# ------------------------------------------------------------ grad check


def grad_check(
    model: OrdererModel,
    codebook: Codebook | None,
    batch: list[tuple[np.ndarray, np.ndarray]],
    epsilon: float = 1e-4,
    lambda_vq: float = 1.0,
) -> float:
    """Max relative error between analytic and finite-difference gradients.

    ``batch`` is a list of (text_features (n, input_dim), frame_features
    (m, input_dim)) pairs sharing one text length.  The finite differences
    probe a surrogate in which the probe point's code assignments, the
    straight-through offsets and all stop-gradient operands are frozen;
    on that surrogate the analytic gradients are exact, including the
    identity pass-through of the quantization step.
    """
    text_feats = np.stack([np.atleast_2d(t) for t, _ in batch]).astype(np.float64)
    frame_list = [np.atleast_2d(f).astype(np.float64) for _, f in batch]
    b = _build_batch(text_feats, frame_list)

    total0, _, _, grads, code_grads, _ = _orderer_pass(model, codebook, b, lambda_vq)
    for i, g in (code_grads or {}).items():
        grads[f"cb.{i}"] = g

    frozen = None
    use_vq = model.config.use_vq and codebook is not None
    if use_vq:
        z0, _ = model.encode_frames(b.frames_flat)
        details0 = quantize_detailed(codebook, z0)
        frozen = {
            "z0": z0,
            "codes0": details0["codes"].copy(),
            "offset": details0["codes"] - z0,
            "details": details0,
        }

    def loss_at() -> float:
        total, _, _, _, _, _ = _orderer_pass(
            model, codebook, b, lambda_vq, frozen=frozen, want_grads=False
        )
        return total

    all_params = dict(model.params)
    if use_vq:
        for i, book in enumerate(codebook.all_books()):
            all_params[f"cb.{i}"] = book

    # Five-point central stencil: the sharp softmax temperatures make the
    # loss curvature large enough that a plain two-point difference at
    # epsilon 1e-4 carries visible O(eps^2) truncation error.  The
    # denominator floor tracks the loss magnitude because the difference
    # noise on structurally-zero gradients scales with |loss| * eps_mach.
    half = 0.5 * epsilon
    floor = 1e-5 * max(1.0, abs(total0))
    worst = 0.0
    for key in sorted(all_params):
        arr = all_params[key]
        analytic = grads.get(key)
        if analytic is None:
            analytic = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            vals = []
            for delta in (2.0 * half, half, -half, -2.0 * half):
                arr[idx] = orig + delta
                vals.append(loss_at())
            arr[idx] = orig
            f2u, f1u, f1d, f2d = vals
            fd = (-f2u + 8.0 * f1u - 8.0 * f1d + f2d) / (12.0 * half)
            a = float(analytic[idx])
            rel = abs(a - fd) / max(abs(a), abs(fd), floor)
            worst = max(worst, rel)
            it.iternext()
    return worst
