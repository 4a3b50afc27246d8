"""Neural network primitives with hand-written backward passes.

Every forward returns (output, cache); the matching ``*_back`` consumes
the upstream gradient plus the cache and returns input and parameter
gradients.  All math runs in float64 so finite-difference checks of the
analytic gradients are meaningful.
"""

from __future__ import annotations

import numpy as np


def lecun_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)


# ---------------------------------------------------------------- linear


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def linear_back(dy: np.ndarray, cache):
    x, w = cache
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


# ------------------------------------------------------------ layer norm


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layer_norm_back(dy: np.ndarray, cache):
    xhat, inv, gamma = cache
    d = xhat.shape[-1]
    dgamma = (dy * xhat).reshape(-1, d).sum(axis=0)
    dbeta = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


# ------------------------------------------------------------------ gelu


def gelu(x: np.ndarray):
    # tanh approximation; smooth everywhere, which keeps finite-difference
    # probes well behaved.
    c = np.sqrt(2.0 / np.pi)
    inner = c * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), (x, t, c)


def gelu_back(dy: np.ndarray, cache):
    x, t, c = cache
    dinner = c * (1.0 + 3 * 0.044715 * x**2)
    dt = (1.0 - t**2) * dinner
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


# ------------------------------------------------------- row normalize


def normalize_rows(x: np.ndarray, eps: float = 1e-12):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    norm = np.maximum(norm, eps)
    y = x / norm
    return y, (y, norm)


def normalize_rows_back(dy: np.ndarray, cache):
    y, norm = cache
    return (dy - y * np.sum(dy * y, axis=-1, keepdims=True)) / norm


# -------------------------------------------------------------- softmax


def softmax_last(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------ attention


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, l, d = x.shape
    return x.reshape(b, l, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, l, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * hd)


def attention(
    xq: np.ndarray,
    xkv: np.ndarray,
    wq: np.ndarray,
    bq: np.ndarray,
    wk: np.ndarray,
    bk: np.ndarray,
    wv: np.ndarray,
    bv: np.ndarray,
    wo: np.ndarray,
    bo: np.ndarray,
    heads: int,
    mask: np.ndarray | None,
):
    """Multi-head attention; self-attention when xq is xkv.

    ``mask`` is boolean (Lq, Lk), True where attending is allowed.  Every
    query row must keep at least one allowed key.
    """
    q, cq = linear(xq, wq, bq)
    k, ck = linear(xkv, wk, bk)
    v, cv = linear(xkv, wv, bv)
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = np.einsum("bhqd,bhkd->bhqk", qh, kh) * scale
    if mask is not None:
        scores = np.where(mask[None, None, :, :], scores, -1e30)
    attn = softmax_last(scores)
    ctx = np.einsum("bhqk,bhkd->bhqd", attn, vh)
    merged = _merge_heads(ctx)
    out, co = linear(merged, wo, bo)
    cache = (cq, ck, cv, co, qh, kh, vh, attn, mask, scale, heads)
    return out, cache


def attention_back(dy: np.ndarray, cache):
    cq, ck, cv, co, qh, kh, vh, attn, mask, scale, heads = cache
    dmerged, dwo, dbo = linear_back(dy, co)
    dctx = _split_heads(dmerged, heads)
    dattn = np.einsum("bhqd,bhkd->bhqk", dctx, vh)
    dvh = np.einsum("bhqk,bhqd->bhkd", attn, dctx)
    dscores = attn * (dattn - np.sum(dattn * attn, axis=-1, keepdims=True))
    if mask is not None:
        dscores = np.where(mask[None, None, :, :], dscores, 0.0)
    dscores = dscores * scale
    dqh = np.einsum("bhqk,bhkd->bhqd", dscores, kh)
    dkh = np.einsum("bhqk,bhqd->bhkd", dscores, qh)
    dq, dk, dv = _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)
    dxq, dwq, dbq = linear_back(dq, cq)
    dxk, dwk, dbk = linear_back(dk, ck)
    dxv, dwv, dbv = linear_back(dv, cv)
    dxkv = dxk + dxv
    grads = (dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo)
    return dxq, dxkv, grads


# ----------------------------------------------------------- optimizer


class AdamW:
    """Adam with decoupled weight decay.

    Decay is applied only to matrices (ndim >= 2); biases, gains and
    single vectors such as temperatures are left undecayed.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float,
        weight_decay: float = 0.05,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        no_decay: tuple[str, ...] = (),
    ):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.no_decay = no_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for key, p in self.params.items():
            g = grads.get(key)
            if g is None:
                continue
            m = self.m[key]
            v = self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            decayable = p.ndim >= 2 and not any(key.startswith(pre) for pre in self.no_decay)
            if decayable and self.weight_decay > 0:
                update = update + self.weight_decay * p
            p -= lr * update


def lr_at(step: int, total_steps: int, base_lr: float, warmup_frac: float = 0.1) -> float:
    """Linear warmup to base_lr, then linear decay to zero."""
    if total_steps <= 0:
        return base_lr
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return base_lr * (step + 1) / warmup
    remain = max(1, total_steps - warmup)
    frac = (total_steps - step) / remain
    return base_lr * max(0.0, min(1.0, frac))
