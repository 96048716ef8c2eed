"""Cross-granularity aggregation with a shared and a task-specific encoder.

A sequence ``[cls; members] + P`` goes through the task's own encoder
(``pia_social`` or ``pia_global``) and through the shared encoder ``psa``.
The aggregated vector is ``cls_own + lambda * cls_shared``. Both tasks read
the very same ``psa`` parameters, so training either task moves the other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import ConfigError, ParamStore, Tensor, encoder, init_encoder
from .numerics import tensor as T

MODES = ("mix", "pia", "psa", "maxpool")
VARIANTS = ("social", "global")


class CapacityError(ValueError):
    pass


@dataclass
class AggConfig:
    pia_layers: int = 4
    psa_layers: int = 2
    heads: int = 12
    lambda_social: float = 0.8
    lambda_global: float = 1.0
    nmax: int = 64
    mode: str = "mix"

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown aggregation mode {self.mode!r}")
        if self.lambda_social < 0 or self.lambda_global < 0:
            raise ConfigError("lambda must be non-negative")
        if self.nmax < 1:
            raise ConfigError("nmax must be positive")

    def lam(self, variant: str) -> float:
        return self.lambda_social if variant == "social" else self.lambda_global


def init_aggregator(store: ParamStore, cfg: AggConfig, dim: int, rng: np.random.Generator,
                    prefix: str = "agg") -> None:
    cfg.validate()
    init_encoder(store, f"{prefix}.psa", dim, cfg.psa_layers, rng)
    for v in VARIANTS:
        init_encoder(store, f"{prefix}.pia_{v}", dim, cfg.pia_layers, rng)
        store.add(f"{prefix}.cls_{v}", rng.normal(0.0, 0.02, size=(1, dim)))
    store.add(f"{prefix}.pos", rng.normal(0.0, 0.02, size=(cfg.nmax + 1, dim)))


def build_sequence(members: Tensor, cls: Tensor, pos_table: Tensor) -> Tensor:
    """``[cls; members] + pos_table[:M+1]`` as an ``[M+1, D]`` sequence."""
    m = members.shape[0]
    if m + 1 > pos_table.shape[0]:
        raise CapacityError(f"{m} members exceed position table capacity {pos_table.shape[0] - 1}")
    return T.concat([cls, members], axis=0) + pos_table[: m + 1]


def aggregate(members: Tensor, variant: str, store: ParamStore, cfg: AggConfig, prefix: str = "agg",
              lam: float | None = None) -> Tensor:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if members.shape[0] < 1:
        raise ValueError("cannot aggregate an empty member set")
    if cfg.mode == "maxpool":
        return T.reshape(T.tmax(members, axis=0), (1, members.shape[1]))
    seq = build_sequence(members, store[f"{prefix}.cls_{variant}"], store[f"{prefix}.pos"])
    seq = T.reshape(seq, (1,) + seq.shape)
    if cfg.mode == "psa":
        return encoder(seq, store, f"{prefix}.psa", cfg.psa_layers, cfg.heads)[0, :1]
    own = encoder(seq, store, f"{prefix}.pia_{variant}", cfg.pia_layers, cfg.heads)[0, :1]
    if cfg.mode == "pia":
        return own
    shared = encoder(seq, store, f"{prefix}.psa", cfg.psa_layers, cfg.heads)[0, :1]
    return own + shared * (cfg.lam(variant) if lam is None else lam)


def check_groups(groups: Sequence[Sequence[int]], n: int) -> None:
    seen: set[int] = set()
    for g in groups:
        if len(g) == 0:
            raise ValueError("empty group")
        for i in g:
            if not 0 <= i < n:
                raise ValueError(f"member index {i} out of range for {n} individuals")
            if i in seen:
                raise ValueError(f"individual {i} appears in more than one group")
            seen.add(i)


def aggregate_groups(x_st: Tensor, partition: Sequence[Sequence[int]], store: ParamStore, cfg: AggConfig,
                     prefix: str = "agg") -> Tensor:
    """One social aggregate per group, rows in partition order -> ``[G, D]``."""
    check_groups(partition, x_st.shape[0])
    if not partition:
        return Tensor(np.zeros((0, x_st.shape[1])))
    rows = [aggregate(x_st[np.asarray(sorted(g))], "social", store, cfg, prefix) for g in partition]
    return T.concat(rows, axis=0)


def aggregate_global(x_st: Tensor, store: ParamStore, cfg: AggConfig, prefix: str = "agg") -> Tensor:
    return aggregate(x_st, "global", store, cfg, prefix)
