"""Per-granularity multi-label heads and the four-term training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grouping import off_diagonal
from .numerics import ParamStore, Tensor, bce_with_logits
from .numerics import tensor as T
from .numerics.ops import init_linear

HEADS = ("individual", "social", "global")


@dataclass(frozen=True)
class LabelTaxonomy:
    individual: int = 6
    social: int = 4
    global_: int = 3

    def __post_init__(self):
        if min(self.individual, self.social, self.global_) < 1:
            raise ValueError("every granularity needs at least one class")

    def count(self, head: str) -> int:
        return {"individual": self.individual, "social": self.social, "global": self.global_}[head]


@dataclass
class LossBreakdown:
    L_i: float
    L_s: float
    L_g: float
    L_d: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {"L_i": self.L_i, "L_s": self.L_s, "L_g": self.L_g, "L_d": self.L_d, "total": self.total}


def init_heads(store: ParamStore, dim: int, taxonomy: LabelTaxonomy, rng: np.random.Generator,
               prefix: str = "head") -> None:
    for h in HEADS:
        init_linear(store, f"{prefix}.{h}", dim, taxonomy.count(h), rng)


def classify(features: Tensor, head: str, store: ParamStore, prefix: str = "head") -> Tensor:
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}")
    w, b = store[f"{prefix}.{head}.w"], store[f"{prefix}.{head}.b"]
    if features.shape[0] == 0:
        return Tensor(np.zeros((0, w.shape[1])))
    return T.linear(features, w, b)


def multihot(label_sets, n_classes: int) -> np.ndarray:
    out = np.zeros((len(label_sets), n_classes))
    for r, labels in enumerate(label_sets):
        for c in labels:
            out[r, c] = 1.0
    return out


def multitask_loss(individual: Tensor, social: Tensor, global_: Tensor, relation: Tensor,
                   y_individual: np.ndarray, y_social: np.ndarray, y_global: np.ndarray,
                   y_relation: np.ndarray) -> tuple[Tensor, LossBreakdown]:
    """Unit-weighted sum of four mean BCE terms.

    ``social`` rows must be aligned with the ground-truth groups. The relation
    term only sees off-diagonal pairs.
    """
    n = relation.shape[0]
    if relation.shape != (n, n) or np.shape(y_relation) != (n, n):
        raise ValueError("relation logits and targets must both be N x N")
    terms = [
        bce_with_logits(individual, y_individual),
        bce_with_logits(social, y_social),
        bce_with_logits(global_, y_global),
        bce_with_logits(off_diagonal(relation, n), off_diagonal(np.asarray(y_relation, dtype=float), n)),
    ]
    total = terms[0] + terms[1] + terms[2] + terms[3]
    parts = [float(t.data) for t in terms]
    return total, LossBreakdown(*parts, total=float(total.data))


def decide_labels(logits, threshold: float = 0.5) -> list[frozenset[int]]:
    """Labels whose sigmoid exceeds ``threshold``; an empty row falls back to its argmax."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    z = np.asarray(logits, dtype=float)
    probs = 1.0 / (1.0 + np.exp(-z))
    out = []
    for row_z, row_p in zip(z, probs):
        chosen = np.nonzero(row_p > threshold)[0]
        if chosen.size == 0:
            chosen = [int(np.argmax(row_z))]
        out.append(frozenset(int(c) for c in chosen))
    return out
