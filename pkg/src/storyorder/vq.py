"""Vector-quantized codebooks.

Four quantizer variants share one ``Codebook`` container: vanilla nearest
neighbor, multi-stage residual, soft (softmax membership), and two-level
hierarchical.  All codes are unit vectors, so nearest-by-cosine and
nearest-by-L2 agree everywhere.

Gradient conventions used by training: the straight-through estimator
copies gradients from a quantized value to its source feature, the
commitment term moves features only, and the codebook term moves codes
only.  ``quantize_detailed`` plus ``vq_terms`` package everything training
needs to honor those conventions for every variant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


def _unit_rows(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    mat = rng.standard_normal(shape)
    return mat / np.linalg.norm(mat, axis=-1, keepdims=True)


@dataclass
class Codebook:
    """Code storage for one quantizer variant.

    ``codes`` holds (size, dim) for vanilla and soft, (stages, size, dim)
    for multi_stage.  Hierarchical books keep (parent_size, dim) parents
    and (parent_size, size, dim) child books, so ``size`` is always the
    per-book code count.
    """

    variant: str
    code_dim: int
    size: int
    beta: float = 0.8
    codes: np.ndarray | None = None
    parents: np.ndarray | None = None
    children: np.ndarray | None = None
    stages: int = 1
    softness: float = 0.1
    parent_size: int = 0

    @classmethod
    def vanilla(cls, size: int = 4096, code_dim: int = 32, beta: float = 0.8, seed: int = 0):
        rng = np.random.default_rng(seed)
        return cls(
            variant="vanilla",
            code_dim=code_dim,
            size=size,
            beta=beta,
            codes=_unit_rows(rng, (size, code_dim)),
        )

    @classmethod
    def multi_stage(
        cls,
        size: int = 4096,
        code_dim: int = 32,
        stages: int = 3,
        beta: float = 0.8,
        seed: int = 0,
    ):
        if stages < 1:
            raise ValueError("stages must be >= 1")
        rng = np.random.default_rng(seed)
        return cls(
            variant="multi_stage",
            code_dim=code_dim,
            size=size,
            beta=beta,
            stages=stages,
            codes=_unit_rows(rng, (stages, size, code_dim)),
        )

    @classmethod
    def soft(
        cls,
        size: int = 4096,
        code_dim: int = 32,
        softness: float = 0.1,
        beta: float = 0.8,
        seed: int = 0,
    ):
        if softness <= 0:
            raise ValueError("softness must be > 0")
        rng = np.random.default_rng(seed)
        return cls(
            variant="soft",
            code_dim=code_dim,
            size=size,
            beta=beta,
            softness=softness,
            codes=_unit_rows(rng, (size, code_dim)),
        )

    @classmethod
    def hierarchical(
        cls,
        size: int = 4096,
        code_dim: int = 32,
        beta: float = 0.8,
        seed: int = 0,
        parent_size: int | None = None,
    ):
        """Two-level book; ``size`` is the total leaf budget by default."""
        rng = np.random.default_rng(seed)
        if parent_size is None:
            parent_size = max(1, int(round(np.sqrt(size))))
        child_size = max(1, size // parent_size)
        return cls(
            variant="hierarchical",
            code_dim=code_dim,
            size=child_size,
            beta=beta,
            parent_size=parent_size,
            parents=_unit_rows(rng, (parent_size, code_dim)),
            children=_unit_rows(rng, (parent_size, child_size, code_dim)),
        )

    def all_books(self) -> list[np.ndarray]:
        """Every (count, dim) code matrix, viewed for in-place updates."""
        if self.variant == "vanilla" or self.variant == "soft":
            return [self.codes]
        if self.variant == "multi_stage":
            return [self.codes[s] for s in range(self.stages)]
        return [self.parents] + [self.children[p] for p in range(self.parent_size)]

    def normalize_codes(self) -> None:
        for book in self.all_books():
            book /= np.linalg.norm(book, axis=-1, keepdims=True)


@dataclass(frozen=True)
class QuantizeResult:
    """Outcome of quantizing one feature.

    ``index`` is an int for vanilla, an index list for multi-stage and
    hierarchical, and the membership weight vector for soft.
    """

    index: Any
    code: np.ndarray
    similarity: float


def _check_feature(feature: np.ndarray, dim: int) -> np.ndarray:
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (dim,):
        raise ValueError(f"feature shape {f.shape} does not match code_dim {dim}")
    return f


def quantize(codebook: Codebook, feature: np.ndarray) -> QuantizeResult:
    """Vanilla nearest-code lookup; ties resolve to the lowest index."""
    if codebook.variant != "vanilla":
        raise ValueError(f"quantize expects a vanilla codebook, got {codebook.variant!r}")
    f = _check_feature(feature, codebook.code_dim)
    sims = codebook.codes @ f
    idx = int(np.argmax(sims))
    return QuantizeResult(index=idx, code=codebook.codes[idx].copy(), similarity=float(sims[idx]))


def quantize_multi_stage(codebook: Codebook, feature: np.ndarray) -> QuantizeResult:
    """Residual quantization across stages.

    Each stage picks the code most aligned with the current residual and
    subtracts its projection, so the residual norm never increases.  The
    returned code is the renormalized sum of the per-stage contributions.
    With one stage this reduces exactly to vanilla quantization.
    """
    if codebook.variant != "multi_stage":
        raise ValueError(f"expected multi_stage codebook, got {codebook.variant!r}")
    f = _check_feature(feature, codebook.code_dim)
    if codebook.stages == 1:
        sims = codebook.codes[0] @ f
        idx = int(np.argmax(sims))
        return QuantizeResult(
            index=[idx], code=codebook.codes[0][idx].copy(), similarity=float(sims[idx])
        )
    details = _ms_details(codebook, f[None, :])
    code = details["codes"][0]
    return QuantizeResult(
        index=[int(i) for i in details["indices"][0]],
        code=code.copy(),
        similarity=float(code @ f),
    )


def _ms_details(codebook: Codebook, feats: np.ndarray) -> dict:
    n = feats.shape[0]
    indices = np.zeros((n, codebook.stages), dtype=np.int64)
    alphas = np.zeros((n, codebook.stages))
    residuals = np.zeros((n, codebook.stages, codebook.code_dim))
    recon = np.zeros_like(feats)
    residual = feats.copy()
    for s in range(codebook.stages):
        residuals[:, s] = residual
        sims = residual @ codebook.codes[s].T
        idx = np.argmax(sims, axis=1)
        picked = codebook.codes[s][idx]
        alpha = np.einsum("nd,nd->n", residual, picked)
        recon = recon + alpha[:, None] * picked
        residual = residual - alpha[:, None] * picked
        indices[:, s] = idx
        alphas[:, s] = alpha
    norms = np.linalg.norm(recon, axis=1, keepdims=True)
    norms = np.where(norms < 1e-12, 1.0, norms)
    return {
        "indices": indices,
        "alphas": alphas,
        "residuals": residuals,
        "prenorm": recon,
        "codes": recon / norms,
        "final_residual": residual,
    }


def quantize_soft(codebook: Codebook, feature: np.ndarray) -> QuantizeResult:
    """Soft assignment: softmax membership over all codes."""
    if codebook.variant != "soft":
        raise ValueError(f"expected soft codebook, got {codebook.variant!r}")
    f = _check_feature(feature, codebook.code_dim)
    details = _soft_details(codebook, f[None, :])
    code = details["codes"][0]
    return QuantizeResult(
        index=details["weights"][0].copy(), code=code.copy(), similarity=float(code @ f)
    )


def _soft_details(codebook: Codebook, feats: np.ndarray) -> dict:
    logits = feats @ codebook.codes.T / codebook.softness
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    prenorm = weights @ codebook.codes
    norms = np.linalg.norm(prenorm, axis=1, keepdims=True)
    norms = np.where(norms < 1e-12, 1.0, norms)
    return {"weights": weights, "prenorm": prenorm, "codes": prenorm / norms}


def quantize_hierarchical(codebook: Codebook, feature: np.ndarray) -> QuantizeResult:
    """Parent book routes to a child book; the child code is the output."""
    if codebook.variant != "hierarchical":
        raise ValueError(f"expected hierarchical codebook, got {codebook.variant!r}")
    f = _check_feature(feature, codebook.code_dim)
    p = int(np.argmax(codebook.parents @ f))
    child_book = codebook.children[p]
    c = int(np.argmax(child_book @ f))
    code = child_book[c]
    return QuantizeResult(index=[p, c], code=code.copy(), similarity=float(code @ f))


def quantize_any(codebook: Codebook, feature: np.ndarray) -> QuantizeResult:
    dispatch = {
        "vanilla": quantize,
        "multi_stage": quantize_multi_stage,
        "soft": quantize_soft,
        "hierarchical": quantize_hierarchical,
    }
    try:
        fn = dispatch[codebook.variant]
    except KeyError:
        raise ValueError(f"unknown codebook variant {codebook.variant!r}") from None
    return fn(codebook, feature)


def quantize_detailed(codebook: Codebook, feats: np.ndarray) -> dict:
    """Batched quantization with everything training needs for gradients.

    Always returns ``codes`` (n, dim); extra keys depend on the variant.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if codebook.variant == "vanilla":
        sims = feats @ codebook.codes.T
        idx = np.argmax(sims, axis=1)
        return {"indices": idx, "codes": codebook.codes[idx].copy()}
    if codebook.variant == "multi_stage":
        return _ms_details(codebook, feats)
    if codebook.variant == "soft":
        return _soft_details(codebook, feats)
    if codebook.variant == "hierarchical":
        p = np.argmax(feats @ codebook.parents.T, axis=1)
        out_idx = np.zeros((feats.shape[0], 2), dtype=np.int64)
        codes = np.zeros_like(feats)
        for i in range(feats.shape[0]):
            book = codebook.children[p[i]]
            c = int(np.argmax(book @ feats[i]))
            out_idx[i] = (p[i], c)
            codes[i] = book[c]
        return {"indices": out_idx, "codes": codes}
    raise ValueError(f"unknown codebook variant {codebook.variant!r}")


def straight_through(feature: np.ndarray, code: np.ndarray) -> np.ndarray:
    """Quantized value whose gradient is routed to the feature.

    Conceptually feature + stop_gradient(code - feature): the value is the
    code itself, bit for bit, while d(output)/d(feature) is the identity.
    The backward half of the convention is ``straight_through_backward``.
    """
    feature = np.asarray(feature, dtype=np.float64)
    code = np.asarray(code, dtype=np.float64)
    if feature.shape != code.shape:
        raise ValueError(f"feature {feature.shape} and code {code.shape} differ in shape")
    return code.copy()


def straight_through_backward(upstream: np.ndarray) -> np.ndarray:
    """Feature gradient of ``straight_through``: the upstream, unchanged."""
    return np.asarray(upstream, dtype=np.float64).copy()


def vq_loss(features: np.ndarray, codes: np.ndarray, beta: float = 0.8) -> float:
    """Codebook plus commitment objective, summed over the batch.

    value = sum_i ||sg[f_i] - c_i||^2 + beta * ||f_i - sg[c_i]||^2.
    Training applies the first term's gradient to codes only and the
    second term's to features only.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    if features.shape != codes.shape:
        raise ValueError(f"features {features.shape} and codes {codes.shape} differ in shape")
    sq = np.sum((features - codes) ** 2, axis=1)
    return float(np.sum(sq) + beta * np.sum(sq))


def vq_terms(
    codebook: Codebook, feats: np.ndarray, details: dict
) -> tuple[float, np.ndarray, dict[int, np.ndarray]]:
    """Variant-aware quantizer loss with analytic gradients.

    Returns (loss, d_feats, code_grads) where code_grads maps a book's
    position in ``codebook.all_books()`` to the gradient for that book.
    The feature gradient carries only the commitment term; code gradients
    carry only the per-variant codebook pulls (features treated as
    stopped there, codes treated as stopped in the commitment term).
    """
    beta = codebook.beta
    final_codes = details["codes"]
    commit_sq = np.sum((feats - final_codes) ** 2)
    d_feats = 2.0 * beta * (feats - final_codes)

    if codebook.variant == "vanilla":
        idx = details["indices"]
        book_sq = np.sum((final_codes - feats) ** 2)
        grad = np.zeros_like(codebook.codes)
        np.add.at(grad, idx, 2.0 * (codebook.codes[idx] - feats))
        return float(book_sq + beta * commit_sq), d_feats, {0: grad}

    if codebook.variant == "multi_stage":
        loss = beta * commit_sq
        updates: dict[int, np.ndarray] = {}
        for s in range(codebook.stages):
            idx = details["indices"][:, s]
            res = details["residuals"][:, s]
            picked = codebook.codes[s][idx]
            loss += float(np.sum((picked - res) ** 2))
            grad = np.zeros_like(codebook.codes[s])
            np.add.at(grad, idx, 2.0 * (picked - res))
            updates[s] = grad
        return float(loss), d_feats, updates

    if codebook.variant == "soft":
        w = details["weights"]
        diffs = codebook.codes[None, :, :] - feats[:, None, :]
        loss = float(np.sum(w * np.sum(diffs**2, axis=2))) + beta * commit_sq
        grad = 2.0 * np.einsum("nk,nkd->kd", w, diffs)
        return loss, d_feats, {0: grad}

    if codebook.variant == "hierarchical":
        idx = details["indices"]
        loss = beta * commit_sq
        pgrad = np.zeros_like(codebook.parents)
        cgrads: dict[int, np.ndarray] = {}
        for i in range(feats.shape[0]):
            p, c = int(idx[i, 0]), int(idx[i, 1])
            parent = codebook.parents[p]
            child = codebook.children[p][c]
            loss += float(np.sum((parent - feats[i]) ** 2) + np.sum((child - feats[i]) ** 2))
            pgrad[p] += 2.0 * (parent - feats[i])
            if p not in cgrads:
                cgrads[p] = np.zeros_like(codebook.children[p])
            cgrads[p][c] += 2.0 * (child - feats[i])
        updates = {0: pgrad}
        for p, g in cgrads.items():
            updates[1 + p] = g
        return float(loss), d_feats, updates

    raise ValueError(f"unknown codebook variant {codebook.variant!r}")


def codebook_utilization(indices: np.ndarray, size: int) -> tuple[float, float]:
    """Fraction of codes used and the perplexity of the usage histogram.

    An empty index list yields (0.0, 1.0).
    """
    indices = np.asarray(indices, dtype=np.int64).ravel()
    if indices.size == 0:
        return 0.0, 1.0
    if indices.min() < 0 or indices.max() >= size:
        raise ValueError(f"code index out of range for size {size}")
    counts = np.bincount(indices, minlength=size).astype(np.float64)
    probs = counts / counts.sum()
    nz = probs[probs > 0]
    entropy = float(-np.sum(nz * np.log(nz)))
    return float((counts > 0).sum() / size), float(np.exp(entropy))
