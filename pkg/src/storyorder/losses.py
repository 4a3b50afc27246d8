"""Contrastive objectives and their analytic gradients.

Public ``nce_loss``, ``align_loss`` and ``total_loss`` are the reference
scalar forms.  The ``*_training_loss`` variants return gradients for the
manual training loop, including d(loss)/d(temperature).
"""

from __future__ import annotations

import numpy as np

_NEG_INF = -1e30


def nce_loss(
    predictions: np.ndarray,
    targets: np.ndarray,
    negatives: np.ndarray | list[np.ndarray] | None,
    tau: float,
) -> float:
    """Mean InfoNCE over prediction steps.

    Each step scores its own target against the shared (or per-step)
    negatives through a temperature-scaled softmax.  With no negatives the
    loss is exactly zero: only the positive logit remains.
    """
    preds = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    targs = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if preds.shape != targs.shape:
        raise ValueError(f"predictions {preds.shape} and targets {targs.shape} differ")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    n = preds.shape[0]
    if negatives is None:
        neg_list: list[np.ndarray] = [np.zeros((0, preds.shape[1]))] * n
    elif isinstance(negatives, list):
        if len(negatives) != n:
            raise ValueError("per-step negatives list must match prediction count")
        neg_list = [np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in negatives]
        neg_list = [g if g.size else np.zeros((0, preds.shape[1])) for g in neg_list]
    else:
        shared = np.asarray(negatives, dtype=np.float64)
        shared = shared.reshape(0, preds.shape[1]) if shared.size == 0 else np.atleast_2d(shared)
        neg_list = [shared] * n
    total = 0.0
    for i in range(n):
        pos = float(preds[i] @ targs[i]) / tau
        logits = np.concatenate([[pos], preds[i] @ neg_list[i].T / tau])
        shift = logits.max()
        total += float(np.log(np.sum(np.exp(logits - shift))) + shift - pos)
    return total / n


def align_loss(text_vecs: np.ndarray, frame_vecs: np.ndarray, tau: float) -> float:
    """Symmetric in-batch contrastive alignment (both softmax directions)."""
    x = np.asarray(text_vecs, dtype=np.float64)
    y = np.asarray(frame_vecs, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError("align_loss expects matching (B, d) matrices")
    if x.shape[0] < 2:
        raise ValueError("align_loss needs batch size >= 2")
    loss, _, _, _ = align_training_loss(x, y, tau)
    return loss


def total_loss(trans_loss: float, vq_loss_value: float, lambda_vq: float) -> float:
    return float(trans_loss) + float(lambda_vq) * float(vq_loss_value)


def _lse_rows(logits: np.ndarray) -> np.ndarray:
    shift = logits.max(axis=1)
    return np.log(np.exp(logits - shift[:, None]).sum(axis=1)) + shift


def nce_training_loss(
    preds: np.ndarray,
    targets: np.ndarray,
    is_frame_step: np.ndarray,
    tau: float,
):
    """Batched sequence-prediction NCE with in-batch negatives.

    preds/targets: (S, d) over all prediction steps of the mini-batch.
    The negative bank for a step is every frame target in the batch
    except the step's own positive (stop targets never enter the bank).
    Same-sequence frames stay in: ranking the true next frame above its
    own story's other frames is the discrimination decoding relies on.
    Returns (loss, dpreds, dtargets, dtau).
    """
    steps = preds.shape[0]
    bank = targets[is_frame_step]
    sims = preds @ bank.T
    self_col = np.full(steps, -1)
    self_col[is_frame_step] = np.arange(bank.shape[0])
    own = self_col[:, None] == np.arange(bank.shape[0])[None, :]
    logits = np.where(own, _NEG_INF, sims / tau)
    pos_sims = np.einsum("sd,sd->s", preds, targets)
    pos_logit = pos_sims / tau

    full_max = np.maximum(pos_logit, logits.max(axis=1, initial=_NEG_INF))
    exp_bank = np.exp(logits - full_max[:, None])
    exp_pos = np.exp(pos_logit - full_max)
    denom = exp_pos + exp_bank.sum(axis=1)
    loss = float(np.mean(np.log(denom) + full_max - pos_logit))

    q_bank = exp_bank / denom[:, None]
    q_pos = exp_pos / denom
    dlog_bank = q_bank / steps
    dlog_pos = (q_pos - 1.0) / steps

    dpreds = (dlog_bank @ bank + dlog_pos[:, None] * targets) / tau
    dtargets = dlog_pos[:, None] * preds / tau
    dbank = dlog_bank.T @ preds / tau
    dtargets[is_frame_step] += dbank
    dtau = -(np.sum(dlog_bank * sims) + np.sum(dlog_pos * pos_sims)) / tau**2
    return loss, dpreds, dtargets, float(dtau)


def align_training_loss(x: np.ndarray, y: np.ndarray, tau: float):
    """Symmetric InfoNCE with gradients: returns (loss, dx, dy, dtau)."""
    b = x.shape[0]
    sims = x @ y.T
    logits = sims / tau
    eye = np.eye(b)

    lse_r = _lse_rows(logits)
    lse_c = _lse_rows(logits.T)
    loss = float((np.mean(lse_r - np.diag(logits)) + np.mean(lse_c - np.diag(logits))) / 2.0)

    q_r = np.exp(logits - lse_r[:, None])
    q_c = np.exp(logits.T - lse_c[:, None])
    dlogits = (q_r - eye) / (2 * b) + ((q_c - eye) / (2 * b)).T
    dx = dlogits @ y / tau
    dy = dlogits.T @ x / tau
    dtau = -np.sum(dlogits * sims) / tau**2
    return loss, dx, dy, float(dtau)


def position_ce_loss(logits: np.ndarray, target_pos: np.ndarray, valid: np.ndarray):
    """Cross-entropy over position indices for the rerank model.

    logits: (B, m, P); target_pos: (B, m) ints; valid: (B, m) bool.
    Returns (loss, dlogits) averaged over valid slots.
    """
    b, m, _ = logits.shape
    flat = logits.reshape(b * m, -1)
    tgt = target_pos.reshape(-1)
    ok = valid.reshape(-1)
    count = int(ok.sum())
    if count == 0:
        raise ValueError("position_ce_loss needs at least one valid slot")
    shift = flat.max(axis=1, keepdims=True)
    log_q = flat - shift - np.log(np.exp(flat - shift).sum(axis=1, keepdims=True))
    picked = log_q[np.arange(b * m), tgt]
    loss = float(-np.sum(picked[ok]) / count)
    dflat = np.exp(log_q)
    dflat[np.arange(b * m), tgt] -= 1.0
    dflat[~ok] = 0.0
    dflat /= count
    return loss, dflat.reshape(logits.shape)
