"""Spatio-temporal relation encoding of individual features.

Input is ``[T, N, D]``. The spatial encoder attends across individuals
within each frame, the temporal encoder across frames for each individual;
the result is averaged over time to ``[N, D]``. Neither encoder adds a
positional encoding, so the temporal encoder is blind to frame order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ConfigError, ParamStore, Tensor, cross_layer, encoder, init_encoder, init_encoder_layer
from .numerics import tensor as T

STRUCTURES = ("serial", "parallel", "parallel_then_serial", "one_cross", "two_cross")


@dataclass
class StreConfig:
    layers: int = 2
    heads: int = 8
    structure: str = "serial"

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError("STRE needs at least one layer")
        if self.structure not in STRUCTURES:
            raise ConfigError(f"unknown STRE structure {self.structure!r}")


def init_stre(store: ParamStore, cfg: StreConfig, dim: int, rng: np.random.Generator, prefix: str = "stre") -> None:
    cfg.validate()
    init_encoder(store, f"{prefix}.spatial", dim, cfg.layers, rng)
    init_encoder(store, f"{prefix}.temporal", dim, cfg.layers, rng)
    if cfg.structure == "parallel_then_serial":
        init_encoder(store, f"{prefix}.spatial2", dim, cfg.layers, rng)
        init_encoder(store, f"{prefix}.temporal2", dim, cfg.layers, rng)
    elif cfg.structure in ("one_cross", "two_cross"):
        for i in range(1 if cfg.structure == "one_cross" else 2):
            init_encoder_layer(store, f"{prefix}.cross{i}", dim, rng, cross=True)


def spatial_encode(x: Tensor, store: ParamStore, cfg: StreConfig, prefix: str = "stre.spatial") -> Tensor:
    """Self-attention over individuals, frames acting as the batch."""
    if x.ndim != 3 or x.shape[1] < 1:
        raise ValueError("expected [T, N, D] with N >= 1")
    return encoder(x, store, prefix, cfg.layers, cfg.heads)


def temporal_encode(x: Tensor, store: ParamStore, cfg: StreConfig, prefix: str = "stre.temporal") -> Tensor:
    """Transpose ``[T, N, D] -> [N, T, D]`` and attend across frames."""
    if x.ndim != 3 or x.shape[0] < 1:
        raise ValueError("expected [T, N, D] with T >= 1")
    return encoder(T.transpose(x, (1, 0, 2)), store, prefix, cfg.layers, cfg.heads)


def _frames_first(y: Tensor) -> Tensor:
    return T.transpose(y, (1, 0, 2))


def stre_forward(x: Tensor, store: ParamStore, cfg: StreConfig, prefix: str = "stre") -> Tensor:
    """Encode ``[T, N, D]`` and average over time to ``[N, D]``."""
    cfg.validate()
    if cfg.structure == "serial":
        y = temporal_encode(spatial_encode(x, store, cfg, f"{prefix}.spatial"), store, cfg, f"{prefix}.temporal")
        return T.mean(y, axis=1)

    s = spatial_encode(x, store, cfg, f"{prefix}.spatial")
    t = _frames_first(temporal_encode(x, store, cfg, f"{prefix}.temporal"))
    if cfg.structure == "parallel":
        y = s + t
    elif cfg.structure == "parallel_then_serial":
        y = _frames_first(temporal_encode(spatial_encode(s + t, store, cfg, f"{prefix}.spatial2"),
                                          store, cfg, f"{prefix}.temporal2"))
    elif cfg.structure == "one_cross":
        y = cross_layer(s, t, store, f"{prefix}.cross0", cfg.heads)
    else:
        y = cross_layer(s, t, store, f"{prefix}.cross0", cfg.heads) + \
            cross_layer(t, s, store, f"{prefix}.cross1", cfg.heads)
    return T.mean(y, axis=0)
