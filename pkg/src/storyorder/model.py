"""Sequence models for storyboard ordering.

``OrdererModel`` is a prefix decoder: text tokens attend bidirectionally
among themselves, frame tokens attend causally and see the whole text
prefix.  A learned start token separates the two segments and emits the
first-frame prediction; every output is a unit vector in code space.  An
alternative conditioning mode moves the text into per-block cross
attention instead of the prefix.

``RerankModel`` is the non-causal contrast model: it reads text plus all
candidate frames bidirectionally and predicts a position distribution per
frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from storyorder.nn import (
    attention,
    attention_back,
    gelu,
    gelu_back,
    layer_norm,
    layer_norm_back,
    lecun_init,
    linear,
    linear_back,
    normalize_rows,
    normalize_rows_back,
)

CONDITIONING_MODES = ("prefix", "cross_attention")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    code_dim: int = 32
    model_dim: int = 128
    depth: int = 3
    heads: int = 4
    mlp_ratio: int = 4
    max_text_len: int = 8
    max_frames: int = 21
    conditioning_mode: str = "prefix"
    use_vq: bool = True

    def __post_init__(self):
        if self.conditioning_mode not in CONDITIONING_MODES:
            raise ValueError(f"conditioning_mode must be one of {CONDITIONING_MODES}")
        if self.depth < 0 or self.heads < 1:
            raise ValueError("depth must be >= 0 and heads >= 1")
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")

    @property
    def max_positions(self) -> int:
        return self.max_text_len + self.max_frames + 2

    def to_dict(self) -> dict:
        return asdict(self)


def build_prefix_mask(n_text: int, n_frames: int) -> np.ndarray:
    """Boolean (L, L) attention mask, True where attending is allowed.

    The first n_text rows form a bidirectional block that ignores frames;
    frame rows see the whole text block plus frames up to themselves.
    """
    if n_text < 1 or n_frames < 0:
        raise ValueError("need n_text >= 1 and n_frames >= 0")
    length = n_text + n_frames
    mask = np.zeros((length, length), dtype=bool)
    mask[:n_text, :n_text] = True
    for i in range(n_text, length):
        mask[i, :n_text] = True
        mask[i, n_text : i + 1] = True
    return mask


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def _acc(grads: dict, name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g


_ATTN_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def _init_block(rng, params: dict, prefix: str, dim: int, mlp_dim: int, cross: bool) -> None:
    params[f"{prefix}.ln1.g"] = np.ones(dim)
    params[f"{prefix}.ln1.b"] = np.zeros(dim)
    for key in _ATTN_KEYS:
        if key.startswith("w"):
            params[f"{prefix}.attn.{key}"] = lecun_init(rng, dim, dim)
        else:
            params[f"{prefix}.attn.{key}"] = np.zeros(dim)
    if cross:
        params[f"{prefix}.lnx.g"] = np.ones(dim)
        params[f"{prefix}.lnx.b"] = np.zeros(dim)
        for key in _ATTN_KEYS:
            if key.startswith("w"):
                params[f"{prefix}.xattn.{key}"] = lecun_init(rng, dim, dim)
            else:
                params[f"{prefix}.xattn.{key}"] = np.zeros(dim)
    params[f"{prefix}.ln2.g"] = np.ones(dim)
    params[f"{prefix}.ln2.b"] = np.zeros(dim)
    params[f"{prefix}.mlp.w1"] = lecun_init(rng, dim, mlp_dim)
    params[f"{prefix}.mlp.b1"] = np.zeros(mlp_dim)
    params[f"{prefix}.mlp.w2"] = lecun_init(rng, mlp_dim, dim)
    params[f"{prefix}.mlp.b2"] = np.zeros(dim)


def _attn_params(params: dict, prefix: str) -> list[np.ndarray]:
    return [params[f"{prefix}.{k}"] for k in _ATTN_KEYS]


def _stack_forward(
    params: dict,
    prefix_fmt: str,
    x: np.ndarray,
    mask: np.ndarray | None,
    heads: int,
    depth: int,
    memory: np.ndarray | None = None,
):
    caches = []
    for i in range(depth):
        pfx = prefix_fmt.format(i)
        h1, c_ln1 = layer_norm(x, params[f"{pfx}.ln1.g"], params[f"{pfx}.ln1.b"])
        a, c_attn = attention(h1, h1, *_attn_params(params, f"{pfx}.attn"), heads, mask)
        x = x + a
        c_cross = None
        if memory is not None:
            hx, c_lnx = layer_norm(x, params[f"{pfx}.lnx.g"], params[f"{pfx}.lnx.b"])
            ax, c_xattn = attention(hx, memory, *_attn_params(params, f"{pfx}.xattn"), heads, None)
            x = x + ax
            c_cross = (c_lnx, c_xattn)
        h2, c_ln2 = layer_norm(x, params[f"{pfx}.ln2.g"], params[f"{pfx}.ln2.b"])
        u, c_l1 = linear(h2, params[f"{pfx}.mlp.w1"], params[f"{pfx}.mlp.b1"])
        gu, c_g = gelu(u)
        mo, c_l2 = linear(gu, params[f"{pfx}.mlp.w2"], params[f"{pfx}.mlp.b2"])
        x = x + mo
        caches.append((c_ln1, c_attn, c_cross, c_ln2, c_l1, c_g, c_l2))
    return x, caches


def _stack_backward(
    grads: dict,
    prefix_fmt: str,
    dx: np.ndarray,
    caches: list,
    has_memory: bool,
    d_memory: np.ndarray | None,
):
    for i in reversed(range(len(caches))):
        pfx = prefix_fmt.format(i)
        c_ln1, c_attn, c_cross, c_ln2, c_l1, c_g, c_l2 = caches[i]
        dgu, dw2, db2 = linear_back(dx, c_l2)
        _acc(grads, f"{pfx}.mlp.w2", dw2)
        _acc(grads, f"{pfx}.mlp.b2", db2)
        du = gelu_back(dgu, c_g)
        dh2, dw1, db1 = linear_back(du, c_l1)
        _acc(grads, f"{pfx}.mlp.w1", dw1)
        _acc(grads, f"{pfx}.mlp.b1", db1)
        dx2, dg, db = layer_norm_back(dh2, c_ln2)
        _acc(grads, f"{pfx}.ln2.g", dg)
        _acc(grads, f"{pfx}.ln2.b", db)
        dx = dx + dx2
        if has_memory:
            c_lnx, c_xattn = c_cross
            dhx, dmem, attn_grads = attention_back(dx, c_xattn)
            for key, g in zip(_ATTN_KEYS, attn_grads):
                _acc(grads, f"{pfx}.xattn.{key}", g)
            d_memory += dmem
            dxx, dg, db = layer_norm_back(dhx, c_lnx)
            _acc(grads, f"{pfx}.lnx.g", dg)
            _acc(grads, f"{pfx}.lnx.b", db)
            dx = dx + dxx
        dq, dkv, attn_grads = attention_back(dx, c_attn)
        for key, g in zip(_ATTN_KEYS, attn_grads):
            _acc(grads, f"{pfx}.attn.{key}", g)
        dh1 = dq + dkv
        dx1, dg, db = layer_norm_back(dh1, c_ln1)
        _acc(grads, f"{pfx}.ln1.g", dg)
        _acc(grads, f"{pfx}.ln1.b", db)
        dx = dx + dx1
    return dx


class OrdererModel:
    """Prefix decoder over quantized frame tokens."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "OrdererModel":
        rng = np.random.default_rng(seed)
        d = config.model_dim
        p: dict[str, np.ndarray] = {}
        p["text_in.w"] = lecun_init(rng, config.input_dim, d)
        p["text_in.b"] = np.zeros(d)
        p["frame_feat.w"] = lecun_init(rng, config.input_dim, config.code_dim)
        p["frame_feat.b"] = np.zeros(config.code_dim)
        p["frame_in.w"] = lecun_init(rng, config.code_dim, d)
        p["frame_in.b"] = np.zeros(d)
        p["out.w"] = lecun_init(rng, d, config.code_dim)
        p["out.b"] = np.zeros(config.code_dim)
        p["pos"] = 0.02 * rng.standard_normal((config.max_positions, d))
        p["sos"] = 0.02 * rng.standard_normal(d)
        eos = rng.standard_normal(config.code_dim)
        p["eos"] = eos / np.linalg.norm(eos)
        p["tau"] = np.array([0.07])
        cross = config.conditioning_mode == "cross_attention"
        for i in range(config.depth):
            _init_block(rng, p, f"blk{i}", d, config.mlp_ratio * d, cross)
        p["lnf.g"] = np.ones(d)
        p["lnf.b"] = np.zeros(d)
        return cls(config, p)

    # ------------------------------------------------------- frame encoder

    def encode_frames(self, frame_feats: np.ndarray):
        """Map raw frame features (..., input_dim) to unit code-space vectors."""
        pre, c_lin = linear(frame_feats, self.params["frame_feat.w"], self.params["frame_feat.b"])
        z, c_norm = normalize_rows(pre)
        return z, (c_lin, c_norm)

    def encode_frames_back(self, dz: np.ndarray, cache, grads: dict) -> None:
        c_lin, c_norm = cache
        dpre = normalize_rows_back(dz, c_norm)
        _, dw, db = linear_back(dpre, c_lin)
        _acc(grads, "frame_feat.w", dw)
        _acc(grads, "frame_feat.b", db)

    # ------------------------------------------------------------- decoder

    def forward_batch(self, text_feats: np.ndarray, frame_inputs: np.ndarray):
        """Run the decoder on a batch.

        text_feats: (B, n, input_dim); frame_inputs: (B, m, code_dim),
        already in code space (quantized values during training).  Returns
        (preds, cache) with preds (B, m+1, code_dim), row-normalized; the
        first prediction comes from the start token, prediction k+1 from
        frame k.
        """
        cfg = self.config
        p = self.params
        batch, n, _ = text_feats.shape
        m = frame_inputs.shape[1]
        if n > cfg.max_text_len:
            raise ValueError(f"text length {n} exceeds max_text_len {cfg.max_text_len}")
        if m > cfg.max_frames:
            raise ValueError(f"frame count {m} exceeds max_frames {cfg.max_frames}")

        text_tok, c_text = linear(text_feats, p["text_in.w"], p["text_in.b"])
        frame_tok, c_frame = linear(frame_inputs, p["frame_in.w"], p["frame_in.b"])
        sos = np.tile(p["sos"], (batch, 1, 1))

        cross = cfg.conditioning_mode == "cross_attention"
        if cross:
            memory = text_tok + p["pos"][:n]
            x = np.concatenate([sos, frame_tok], axis=1)
            length = m + 1
            x = x + p["pos"][:length]
            mask = causal_mask(length)
            read_start = 0
        else:
            memory = None
            x = np.concatenate([text_tok, sos, frame_tok], axis=1)
            length = n + 1 + m
            x = x + p["pos"][:length]
            mask = build_prefix_mask(n + 1, m)
            read_start = n

        x, block_caches = _stack_forward(
            p, "blk{}", x, mask, cfg.heads, cfg.depth, memory=memory
        )
        hf, c_lnf = layer_norm(x, p["lnf.g"], p["lnf.b"])
        read = hf[:, read_start : read_start + m + 1]
        o, c_out = linear(read, p["out.w"], p["out.b"])
        preds, c_norm = normalize_rows(o)
        cache = {
            "n": n,
            "m": m,
            "len": length,
            "read_start": read_start,
            "cross": cross,
            "c_text": c_text,
            "c_frame": c_frame,
            "c_out": c_out,
            "c_norm": c_norm,
            "c_lnf": c_lnf,
            "blocks": block_caches,
            "x_shape": x.shape,
        }
        return preds, cache

    def backward_batch(self, cache: dict, dpreds: np.ndarray):
        """Return (param grads, gradient w.r.t. frame_inputs)."""
        p = self.params
        grads: dict[str, np.ndarray] = {}
        n, m = cache["n"], cache["m"]
        start = cache["read_start"]

        do = normalize_rows_back(dpreds, cache["c_norm"])
        dread, dw, db = linear_back(do, cache["c_out"])
        _acc(grads, "out.w", dw)
        _acc(grads, "out.b", db)
        dhf = np.zeros(cache["x_shape"])
        dhf[:, start : start + m + 1] = dread
        dx, dg, dbln = layer_norm_back(dhf, cache["c_lnf"])
        _acc(grads, "lnf.g", dg)
        _acc(grads, "lnf.b", dbln)

        d_memory = np.zeros((dx.shape[0], n, dx.shape[2])) if cache["cross"] else None
        dx = _stack_backward(grads, "blk{}", dx, cache["blocks"], cache["cross"], d_memory)

        length = cache["len"]
        _acc(grads, "pos", _pos_grad(dx, length, p["pos"].shape))
        if cache["cross"]:
            dsos = dx[:, 0]
            dframe_tok = dx[:, 1:]
            _acc(grads, "pos", _pos_grad(d_memory, n, p["pos"].shape))
            dtext_tok = d_memory
        else:
            dtext_tok = dx[:, :n]
            dsos = dx[:, n]
            dframe_tok = dx[:, n + 1 :]

        _acc(grads, "sos", dsos.sum(axis=0))
        _, dw, db = linear_back(dtext_tok, cache["c_text"])
        _acc(grads, "text_in.w", dw)
        _acc(grads, "text_in.b", db)
        d_frame_inputs, dw, db = linear_back(dframe_tok, cache["c_frame"])
        _acc(grads, "frame_in.w", dw)
        _acc(grads, "frame_in.b", db)
        return grads, d_frame_inputs


def _pos_grad(dx: np.ndarray, length: int, pos_shape: tuple) -> np.ndarray:
    g = np.zeros(pos_shape)
    g[:length] = dx.sum(axis=0)
    return g


def forward(model: OrdererModel, text_features: np.ndarray, frame_codes: np.ndarray) -> np.ndarray:
    """Single-example decoder pass.

    text_features: (n, input_dim); frame_codes: (m, code_dim).  Returns
    (m+1, code_dim) unit-norm predictions.
    """
    text_features = np.atleast_2d(np.asarray(text_features, dtype=np.float64))
    frame_codes = np.asarray(frame_codes, dtype=np.float64)
    if frame_codes.size == 0:
        frame_codes = np.zeros((0, model.config.code_dim))
    frame_codes = np.atleast_2d(frame_codes)
    preds, _ = model.forward_batch(text_features[None, :, :], frame_codes[None, :, :])
    return preds[0]


# ----------------------------------------------------------------- rerank


@dataclass(frozen=True)
class RerankConfig:
    input_dim: int
    model_dim: int = 128
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    max_text_len: int = 8
    max_frames: int = 21

    @property
    def max_positions(self) -> int:
        return self.max_text_len + self.max_frames + 2

    def to_dict(self) -> dict:
        return asdict(self)


class RerankModel:
    """Bidirectional model predicting a position index per candidate frame."""

    def __init__(self, config: RerankConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: RerankConfig, seed: int = 0) -> "RerankModel":
        rng = np.random.default_rng(seed)
        d = config.model_dim
        p: dict[str, np.ndarray] = {}
        p["text_in.w"] = lecun_init(rng, config.input_dim, d)
        p["text_in.b"] = np.zeros(d)
        p["frame_in.w"] = lecun_init(rng, config.input_dim, d)
        p["frame_in.b"] = np.zeros(d)
        p["pos"] = 0.02 * rng.standard_normal((config.max_positions, d))
        for i in range(config.depth):
            _init_block(rng, p, f"blk{i}", d, config.mlp_ratio * d, cross=False)
        p["lnf.g"] = np.ones(d)
        p["lnf.b"] = np.zeros(d)
        p["head.w"] = lecun_init(rng, d, config.max_frames)
        p["head.b"] = np.zeros(config.max_frames)
        return cls(config, p)

    def forward_batch(self, text_feats: np.ndarray, frame_feats: np.ndarray):
        """Logits (B, m, max_frames): position scores per candidate frame."""
        cfg = self.config
        p = self.params
        batch, n, _ = text_feats.shape
        m = frame_feats.shape[1]
        text_tok, c_text = linear(text_feats, p["text_in.w"], p["text_in.b"])
        frame_tok, c_frame = linear(frame_feats, p["frame_in.w"], p["frame_in.b"])
        x = np.concatenate([text_tok, frame_tok], axis=1)
        length = n + m
        x = x + p["pos"][:length]
        x, block_caches = _stack_forward(p, "blk{}", x, None, cfg.heads, cfg.depth)
        hf, c_lnf = layer_norm(x, p["lnf.g"], p["lnf.b"])
        read = hf[:, n:]
        logits, c_head = linear(read, p["head.w"], p["head.b"])
        cache = {
            "n": n,
            "m": m,
            "len": length,
            "c_text": c_text,
            "c_frame": c_frame,
            "c_head": c_head,
            "c_lnf": c_lnf,
            "blocks": block_caches,
            "x_shape": x.shape,
        }
        return logits, cache

    def backward_batch(self, cache: dict, dlogits: np.ndarray) -> dict:
        p = self.params
        grads: dict[str, np.ndarray] = {}
        n = cache["n"]
        dread, dw, db = linear_back(dlogits, cache["c_head"])
        _acc(grads, "head.w", dw)
        _acc(grads, "head.b", db)
        dhf = np.zeros(cache["x_shape"])
        dhf[:, n:] = dread
        dx, dg, dbln = layer_norm_back(dhf, cache["c_lnf"])
        _acc(grads, "lnf.g", dg)
        _acc(grads, "lnf.b", dbln)
        dx = _stack_backward(grads, "blk{}", dx, cache["blocks"], False, None)
        _acc(grads, "pos", _pos_grad(dx, cache["len"], p["pos"].shape))
        dtext_tok = dx[:, :n]
        dframe_tok = dx[:, n:]
        _, dw, db = linear_back(dtext_tok, cache["c_text"])
        _acc(grads, "text_in.w", dw)
        _acc(grads, "text_in.b", db)
        _, dw, db = linear_back(dframe_tok, cache["c_frame"])
        _acc(grads, "frame_in.w", dw)
        _acc(grads, "frame_in.b", db)
        return grads
