"""Scene tokens, pooled scene vector, and fusion into each granularity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .featmap import FeatureMap
from .numerics import ParamStore, Tensor, cross_layer, init_encoder_layer, softmax_lastdim
from .numerics import tensor as T
from .numerics.ops import init_linear


@dataclass
class SceneTokens:
    tokens: Tensor  # Z, [T, K, D]
    attention: np.ndarray  # A, [T, K, H'*W']


def init_scene(store: ParamStore, channels: int, fh: int, fw: int, k: int, dim: int,
               rng: np.random.Generator, prefix: str = "scene") -> None:
    store.add(f"{prefix}.pos", rng.normal(0.0, 0.02, size=(channels, fh, fw)))
    init_linear(store, f"{prefix}.assign", channels, k, rng)
    init_linear(store, f"{prefix}.proj", channels, dim, rng)


def init_fusion(store: ParamStore, dim: int, rng: np.random.Generator, prefix: str = "fuse") -> None:
    init_encoder_layer(store, f"{prefix}.individual", dim, rng, cross=True)
    init_encoder_layer(store, f"{prefix}.social", dim, rng, cross=True)
    init_linear(store, f"{prefix}.global1", 2 * dim, 2 * dim, rng)
    init_linear(store, f"{prefix}.global2", 2 * dim, dim, rng)


def scene_tokens(fm: FeatureMap, store: ParamStore, prefix: str = "scene") -> SceneTokens:
    """K attention-pooled tokens per frame.

    1x1 projection of the position-encoded map to K logits per pixel,
    softmax over pixels, pool the map with those weights, project to D.
    """
    t, c, fh, fw = fm.shape
    pos = store[f"{prefix}.pos"]
    if pos.shape != (c, fh, fw):
        raise ValueError(f"positional table {pos.shape} does not match feature map {(c, fh, fw)}")
    x = T.transpose(T.reshape(fm.data + pos, (t, c, fh * fw)), (0, 2, 1))  # [T, HW, C]
    logits = T.linear(x, store[f"{prefix}.assign.w"], store[f"{prefix}.assign.b"])  # [T, HW, K]
    attn = softmax_lastdim(T.transpose(logits, (0, 2, 1)))  # [T, K, HW]
    pooled = T.matmul(attn, x)  # [T, K, C]
    z = T.linear(pooled, store[f"{prefix}.proj.w"], store[f"{prefix}.proj.b"])
    return SceneTokens(z, attn.data)


def scene_pool(tokens: SceneTokens) -> Tensor:
    """Mean over frames and tokens -> ``[1, D]``."""
    z = tokens.tokens
    return T.reshape(T.mean(z, axis=(0, 1)), (1, z.shape[2]))


def fuse_individual(x: Tensor, scene: Tensor, store: ParamStore, heads: int,
                    prefix: str = "fuse.individual") -> Tensor:
    """Cross-attend rows of ``x`` ([M, D]) to the single scene vector, then FFN."""
    m, d = x.shape
    if m == 0:
        return x
    out = cross_layer(T.reshape(x, (1, m, d)), T.reshape(scene, (1, 1, d)), store, prefix, heads)
    return T.reshape(out, (m, d))


def fuse_social(groups: Tensor, scene: Tensor, store: ParamStore, heads: int, prefix: str = "fuse.social") -> Tensor:
    return fuse_individual(groups, scene, store, heads, prefix)


def fuse_global(g: Tensor, scene: Tensor, store: ParamStore, prefix: str = "fuse") -> Tensor:
    h = T.concat([g, scene], axis=1)
    h = T.gelu(T.linear(h, store[f"{prefix}.global1.w"], store[f"{prefix}.global1.b"]))
    return T.linear(h, store[f"{prefix}.global2.w"], store[f"{prefix}.global2.b"])
