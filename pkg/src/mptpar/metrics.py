"""Three-granularity evaluation: example-based PRF, Half-metric groups, F_a.

Scores are accumulated as sums and counts so that combining clips is
order-independent. Individual and global F1 are per-instance F1 averaged
over instances; social F1 is the harmonic mean of the matched precision
and recall.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Sequence

REPORT_KEYS = ("P_i", "R_i", "F_i", "P_p", "R_p", "F_p", "P_g", "R_g", "F_g", "F_a")


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class PanoramicScore:
    individual: PRF
    social: PRF
    global_: PRF
    F_a: float

    def values(self) -> dict[str, float]:
        i, s, g = self.individual, self.social, self.global_
        return {"P_i": i.precision, "R_i": i.recall, "F_i": i.f1,
                "P_p": s.precision, "R_p": s.recall, "F_p": s.f1,
                "P_g": g.precision, "R_g": g.recall, "F_g": g.f1, "F_a": self.F_a}

    def report(self) -> str:
        """One ``key=raw percent`` line per key, raw as a round-trippable double."""
        return "".join(f"{k}={v!r} {percent(v)}\n" for k, v in self.values().items())


def percent(x: float) -> str:
    """``x`` as a percentage with one decimal, rounded half-to-even."""
    return str(Decimal(repr(x * 100.0)).quantize(Decimal("0.1"), rounding=ROUND_HALF_EVEN))


def parse_report(text: str) -> dict[str, float]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, rest = line.split("=", 1)
            out[key] = float(rest.split()[0])
    return out


def harmonic(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _instance_prf(pred: frozenset, gt: frozenset) -> tuple[float, float, float, int]:
    if not gt:
        raise ValueError("ground-truth label sets must be nonempty")
    hit = len(pred & gt)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gt)
    return p, r, harmonic(p, r), hit


@dataclass
class LabelTally:
    """Running sums for example-based (and micro) multi-label scores."""
    n: int = 0
    p: float = 0.0
    r: float = 0.0
    f: float = 0.0
    hits: int = 0
    n_pred: int = 0
    n_gt: int = 0

    def add(self, preds: Sequence, gts: Sequence) -> None:
        if len(preds) != len(gts):
            raise ValueError(f"misaligned lists: {len(preds)} predictions vs {len(gts)} ground truths")
        for pred, gt in zip(preds, gts):
            pred, gt = frozenset(pred), frozenset(gt)
            p, r, f, hit = _instance_prf(pred, gt)
            self.n += 1
            self.p += p
            self.r += r
            self.f += f
            self.hits += hit
            self.n_pred += len(pred)
            self.n_gt += len(gt)

    def result(self, average: str = "example") -> PRF:
        if average == "micro":
            p = self.hits / self.n_pred if self.n_pred else 0.0
            r = self.hits / self.n_gt if self.n_gt else 0.0
            return PRF(p, r, harmonic(p, r))
        if average != "example":
            raise ValueError(f"unknown averaging {average!r}")
        if self.n == 0:
            return PRF(0.0, 0.0, 0.0)
        return PRF(self.p / self.n, self.r / self.n, self.f / self.n)


def multilabel_prf(preds: Sequence, gts: Sequence, average: str = "example") -> PRF:
    tally = LabelTally()
    tally.add(preds, gts)
    return tally.result(average)


def iou(a, b) -> float:
    a, b = set(a), set(b)
    return len(a & b) / len(a | b)


def half_match(pred: Sequence[Sequence[int]], gt: Sequence[Sequence[int]]) -> list[tuple[int, int]]:
    """Index pairs ``(pred_group, gt_group)`` whose member IoU exceeds 0.5."""
    pairs = [(i, j) for i, p in enumerate(pred) for j, g in enumerate(gt) if iou(p, g) > 0.5]
    # IoU > 0.5 between disjoint-group partitions can pair each group at most once
    assert len({i for i, _ in pairs}) == len(pairs) and len({j for _, j in pairs}) == len(pairs)
    return pairs


@dataclass
class GroupTally:
    n_pred: int = 0
    n_gt: int = 0
    p: float = 0.0
    r: float = 0.0

    def add(self, pred_groups, pred_labels, gt_groups, gt_labels) -> None:
        if len(pred_groups) != len(pred_labels) or len(gt_groups) != len(gt_labels):
            raise ValueError("every group needs a label set")
        for i, j in half_match(pred_groups, gt_groups):
            p, r, _, _ = _instance_prf(frozenset(pred_labels[i]), frozenset(gt_labels[j]))
            self.p += p
            self.r += r
        self.n_pred += len(pred_groups)
        self.n_gt += len(gt_groups)

    def result(self) -> PRF:
        p = self.p / self.n_pred if self.n_pred else 0.0
        r = self.r / self.n_gt if self.n_gt else 0.0
        return PRF(p, r, harmonic(p, r))


def social_prf(pred_groups, pred_labels, gt_groups, gt_labels) -> PRF:
    """Unmatched groups contribute zero; matched ones their label precision/recall."""
    tally = GroupTally()
    tally.add(pred_groups, pred_labels, gt_groups, gt_labels)
    return tally.result()


def overall_score(individual: PRF, social: PRF, global_: PRF) -> PanoramicScore:
    return PanoramicScore(individual, social, global_, (individual.f1 + social.f1 + global_.f1) / 3)


@dataclass
class ScoreAccumulator:
    average: str = "example"
    individual: LabelTally = field(default_factory=LabelTally)
    social: GroupTally = field(default_factory=GroupTally)
    global_: LabelTally = field(default_factory=LabelTally)

    def add_clip(self, ind_pred, ind_gt, group_pred, group_pred_labels, group_gt, group_gt_labels,
                 glob_pred, glob_gt) -> None:
        self.individual.add(ind_pred, ind_gt)
        self.social.add(group_pred, group_pred_labels, group_gt, group_gt_labels)
        self.global_.add([glob_pred], [glob_gt])

    def result(self) -> PanoramicScore:
        return overall_score(self.individual.result(self.average), self.social.result(),
                             self.global_.result(self.average))
