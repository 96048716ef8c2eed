"""Attention building blocks and losses on top of the tape."""

from __future__ import annotations

import numpy as np

from .params import ParamStore
from .tensor import DTYPE, NonFiniteError, Tensor, add, gelu, linear, matmul, reshape, swap_last, transpose

LN_EPS = 1e-5
FFN_MULT = 4


class ConfigError(ValueError):
    pass


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.shape[-1] < 1:
        raise ValueError("softmax over an empty axis")
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError("non-finite input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        x._accum(out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return Tensor(out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm over a zero-length axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accum(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            x._accum(inv * (gh - gh.mean(axis=-1, keepdims=True)
                            - xhat * (gh * xhat).mean(axis=-1, keepdims=True)))

    return Tensor(out, (x, gain, bias), bw)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits (log-sum-exp form).

    An empty input gives a zero loss rather than a 0/0 mean.
    """
    t = np.asarray(targets, dtype=DTYPE)
    if t.shape != logits.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs targets {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("targets must be 0 or 1")
    n = t.size
    if n == 0:
        return Tensor(0.0, (logits,), lambda g: None)
    z = logits.data
    loss = (np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum() / n

    def bw(g):
        e = np.exp(-np.abs(z))
        sig = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        logits._accum(g * (sig - t) / n)

    return Tensor(loss, (logits,), bw)


# ---------------------------------------------------------------- parameter init

def init_linear(store: ParamStore, prefix: str, d_in: int, d_out: int, rng: np.random.Generator,
                std: float = 0.02) -> None:
    store.add(f"{prefix}.w", rng.normal(0.0, std, size=(d_in, d_out)))
    store.add(f"{prefix}.b", np.zeros(d_out))


def init_layer_norm(store: ParamStore, prefix: str, d: int) -> None:
    store.add(f"{prefix}.g", np.ones(d))
    store.add(f"{prefix}.b", np.zeros(d))


def init_attention(store: ParamStore, prefix: str, d: int, rng: np.random.Generator) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(store, f"{prefix}.{proj}", d, d, rng)


def init_encoder_layer(store: ParamStore, prefix: str, d: int, rng: np.random.Generator,
                       cross: bool = False) -> None:
    init_layer_norm(store, f"{prefix}.ln1", d)
    if cross:
        init_layer_norm(store, f"{prefix}.ln_kv", d)
    init_attention(store, f"{prefix}.attn", d, rng)
    init_layer_norm(store, f"{prefix}.ln2", d)
    init_linear(store, f"{prefix}.ffn1", d, FFN_MULT * d, rng)
    init_linear(store, f"{prefix}.ffn2", FFN_MULT * d, d, rng)


def init_encoder(store: ParamStore, prefix: str, d: int, layers: int, rng: np.random.Generator) -> None:
    for i in range(layers):
        init_encoder_layer(store, f"{prefix}.{i}", d, rng)


# ---------------------------------------------------------------- attention

def _lin(x: Tensor, store: ParamStore, prefix: str) -> Tensor:
    return linear(x, store[f"{prefix}.w"], store[f"{prefix}.b"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, length, d = x.shape
    return transpose(reshape(x, (b, length, heads, d // heads)), (0, 2, 1, 3))


def multi_head_attention(q_src: Tensor, kv_src: Tensor, store: ParamStore, prefix: str,
                         heads: int, return_weights: bool = False):
    """Scaled dot-product attention over ``[B, L, D]`` inputs.

    Scores are scaled by ``1/sqrt(D/heads)``. With ``return_weights`` the
    per-head attention array ``[B, heads, Lq, Lk]`` is returned as well.
    """
    b, lq, d = q_src.shape
    if heads < 1 or d % heads:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads")
    q = _split_heads(_lin(q_src, store, f"{prefix}.q"), heads)
    k = _split_heads(_lin(kv_src, store, f"{prefix}.k"), heads)
    v = _split_heads(_lin(kv_src, store, f"{prefix}.v"), heads)
    scores = matmul(q, swap_last(k)) * (1.0 / np.sqrt(d // heads))
    weights = softmax_lastdim(scores)
    ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (b, lq, d))
    out = _lin(ctx, store, f"{prefix}.o")
    if return_weights:
        return out, weights.data
    return out


def feed_forward(x: Tensor, store: ParamStore, prefix: str) -> Tensor:
    return _lin(gelu(_lin(x, store, f"{prefix}.ffn1")), store, f"{prefix}.ffn2")


def _ln(x: Tensor, store: ParamStore, prefix: str) -> Tensor:
    return layer_norm(x, store[f"{prefix}.g"], store[f"{prefix}.b"])


def encoder_layer(x: Tensor, store: ParamStore, prefix: str, heads: int) -> Tensor:
    """Pre-norm block: ``h = x + MHSA(LN(x))``, then ``h + FFN(LN(h))``."""
    h = _ln(x, store, f"{prefix}.ln1")
    h = add(x, multi_head_attention(h, h, store, f"{prefix}.attn", heads))
    return add(h, feed_forward(_ln(h, store, f"{prefix}.ln2"), store, prefix))


def cross_layer(q: Tensor, kv: Tensor, store: ParamStore, prefix: str, heads: int) -> Tensor:
    """Pre-norm cross-attention block; queries keep the residual stream."""
    qn = _ln(q, store, f"{prefix}.ln1")
    kvn = _ln(kv, store, f"{prefix}.ln_kv")
    h = add(q, multi_head_attention(qn, kvn, store, f"{prefix}.attn", heads))
    return add(h, feed_forward(_ln(h, store, f"{prefix}.ln2"), store, prefix))


def encoder(x: Tensor, store: ParamStore, prefix: str, layers: int, heads: int) -> Tensor:
    for i in range(layers):
        x = encoder_layer(x, store, f"{prefix}.{i}", heads)
    return x
