"""Full model wiring, training loop, evaluation and checkpoints.

Forward pass per clip::

    frames -> backbone -> RoIAlign -> flatten (+ box geometry) -> X [T, N, D]
    X -> STRE (or temporal mean) -> X_st [N, D]
    feature map -> scene tokens -> pooled scene vector
    X_st -> relation logits -> groups (ground truth in training, spectral in eval)
    groups / whole scene -> aggregation -> scene fusion -> heads
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import config as kv
from .featmap import BACKBONE_STRIDE, flatten_rois, init_backbone, init_flatten, roi_align, synth_backbone
from .grouping import affinity_from_logits, canonical, init_relation, relation_logits, spectral_cluster
from .heads import LabelTaxonomy, LossBreakdown, classify, decide_labels, init_heads, multihot, multitask_loss
from .metrics import PRF, PanoramicScore, ScoreAccumulator, harmonic, overall_score
from .numerics import ConfigError, ParamStore, Tensor, adam_step, backward
from .numerics import tensor as T
from .numerics.ops import init_linear
from .psicga import AggConfig, aggregate_global, aggregate_groups, init_aggregator
from .scene import fuse_global, fuse_individual, fuse_social, init_fusion, init_scene, scene_pool, scene_tokens
from .stre import StreConfig, init_stre, stre_forward


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value: float, epoch: int | None = None):
        where = f" in epoch {epoch}" if epoch is not None else ""
        super().__init__(f"loss term {term} became non-finite ({value}){where}")
        self.term = term


class TaxonomyError(ValueError):
    pass


@dataclass
class ModelConfig:
    dim: int = 96
    channels: int = 32
    roi_size: int = 3
    stre_layers: int = 2
    stre_heads: int = 8
    stre_structure: str = "serial"
    pia_layers: int = 4
    psa_layers: int = 2
    agg_heads: int = 12
    lambda_social: float = 0.8
    lambda_global: float = 1.0
    nmax: int = 64
    agg_mode: str = "mix"
    scene_tokens: int = 16
    fuse_heads: int = 8
    relation_hidden: int = 64
    n_individual: int = 6
    n_social: int = 4
    n_global: int = 3
    threshold: float = 0.5
    height: int = 64
    width: int = 64
    kmax: int = 8
    use_stre: bool = True
    use_scene: bool = True
    use_geometry: bool = True
    seed: int = 0

    def validate(self) -> None:
        for name in ("dim", "channels", "roi_size", "scene_tokens", "relation_hidden", "kmax"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name, heads in (("stre_heads", self.stre_heads), ("agg_heads", self.agg_heads),
                            ("fuse_heads", self.fuse_heads)):
            if heads < 1 or self.dim % heads:
                raise ConfigError(f"{name}={heads} does not divide dim={self.dim}")
        if self.height % BACKBONE_STRIDE or self.width % BACKBONE_STRIDE:
            raise ConfigError(f"frame size must be a multiple of {BACKBONE_STRIDE}")
        if min(self.height, self.width) < 2 * BACKBONE_STRIDE:
            raise ConfigError("frames must give at least a 2x2 feature map")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        self.stre().validate()
        self.agg().validate()
        self.taxonomy()

    def stre(self) -> StreConfig:
        return StreConfig(self.stre_layers, self.stre_heads, self.stre_structure)

    def agg(self) -> AggConfig:
        return AggConfig(self.pia_layers, self.psa_layers, self.agg_heads, self.lambda_social, self.lambda_global,
                         self.nmax, self.agg_mode)

    def taxonomy(self) -> LabelTaxonomy:
        return LabelTaxonomy(self.n_individual, self.n_social, self.n_global)

    @property
    def feature_size(self) -> tuple[int, int]:
        return self.height // BACKBONE_STRIDE, self.width // BACKBONE_STRIDE


@dataclass
class TrainConfig:
    batch_size: int = 2
    frames: int = 3
    epochs: int = 30
    lr: float = 7e-6
    weight_decay: float = 1e-2
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.frames < 1 or self.epochs < 0:
            raise ConfigError("batch size and frames must be positive, epochs non-negative")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight decay must be non-negative")


def init_model(cfg: ModelConfig) -> ParamStore:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    store = ParamStore()
    fh, fw = cfg.feature_size
    init_backbone(store, cfg.channels, rng)
    init_flatten(store, cfg.channels, cfg.roi_size, cfg.roi_size, cfg.dim, rng)
    if cfg.use_geometry:
        init_linear(store, "roi_geom", 4, cfg.dim, rng, std=0.5)
    if cfg.use_stre:
        init_stre(store, cfg.stre(), cfg.dim, rng)
    init_relation(store, cfg.dim, cfg.relation_hidden, rng)
    init_aggregator(store, cfg.agg(), cfg.dim, rng)
    if cfg.use_scene:
        init_scene(store, cfg.channels, fh, fw, cfg.scene_tokens, cfg.dim, rng)
        init_fusion(store, cfg.dim, rng)
    init_heads(store, cfg.dim, cfg.taxonomy(), rng)
    return store


@dataclass
class ForwardResult:
    individual: Tensor  # [N, C_I] logits
    social: Tensor  # [G, C_S] logits, rows follow ``partition``
    global_: Tensor  # [1, C_G] logits
    relation: Tensor  # [N, N] logits
    partition: list[list[int]]
    scene_attention: np.ndarray | None = None  # [T, K, H'*W']
    loss: Tensor | None = None
    breakdown: LossBreakdown | None = None


def _geometry(boxes: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    scale = np.array([cfg.width, cfg.height, cfg.width, cfg.height], dtype=np.float64)
    return np.asarray(boxes, dtype=np.float64) / scale * 2.0 - 1.0


def check_taxonomy(clip, cfg: ModelConfig) -> None:
    tax = cfg.taxonomy()
    for head, sets in (("individual", clip.individual_labels), ("social", clip.group_labels),
                       ("global", [clip.global_labels])):
        top = max((c for s in sets for c in s), default=-1)
        if top >= tax.count(head):
            raise TaxonomyError(f"{head} label {top} is outside the model's {tax.count(head)} classes")


def forward(clip, mode: str, store: ParamStore, cfg: ModelConfig,
            partition_override: Sequence[Sequence[int]] | None = None) -> ForwardResult:
    """Run the model on one clip.

    ``train`` groups by the ground-truth partition and attaches the loss;
    ``eval`` groups by spectral clustering of the relation affinities unless
    ``partition_override`` is given.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    frames = np.asarray(clip.frames, dtype=np.float64)
    if frames.shape[2:] != (cfg.height, cfg.width):
        raise ConfigError(f"clip frames {frames.shape[2:]} do not match model size {(cfg.height, cfg.width)}")
    n = clip.boxes.shape[1]
    if n < 1:
        raise ValueError("clip has no individuals")

    fm = synth_backbone(frames, store)
    x = flatten_rois(roi_align(fm, clip.boxes, cfg.roi_size, cfg.roi_size), store)  # [T, N, D]
    if cfg.use_geometry:
        x = x + T.linear(Tensor(_geometry(clip.boxes, cfg)), store["roi_geom.w"], store["roi_geom.b"])
    x_st = stre_forward(x, store, cfg.stre()) if cfg.use_stre else T.mean(x, axis=0)

    rel = relation_logits(x_st, store)
    if partition_override is not None:
        partition = canonical(partition_override)
    elif mode == "train":
        partition = canonical(clip.partition)
    else:
        partition = spectral_cluster(affinity_from_logits(rel.data), kmax=min(n, cfg.kmax), seed=cfg.seed)

    agg = cfg.agg()
    groups = aggregate_groups(x_st, partition, store, agg)
    glob = aggregate_global(x_st, store, agg)
    ind = x_st
    attention = None
    if cfg.use_scene:
        tokens = scene_tokens(fm, store)
        attention = tokens.attention
        scene = scene_pool(tokens)
        ind = fuse_individual(ind, scene, store, cfg.fuse_heads)
        groups = fuse_social(groups, scene, store, cfg.fuse_heads)
        glob = fuse_global(glob, scene, store)

    out = ForwardResult(classify(ind, "individual", store), classify(groups, "social", store),
                        classify(glob, "global", store), rel, partition, attention)
    if mode == "train":
        check_taxonomy(clip, cfg)
        tax = cfg.taxonomy()
        gt = canonical(clip.partition)
        if partition != gt:
            raise ValueError("training needs social rows aligned with the ground-truth groups")
        own = {tuple(sorted(g)): lab for g, lab in zip(clip.partition, clip.group_labels)}
        group_labels = [own[tuple(g)] for g in partition]
        out.loss, out.breakdown = multitask_loss(
            out.individual, out.social, out.global_, rel,
            multihot(clip.individual_labels, tax.individual), multihot(group_labels, tax.social),
            multihot([clip.global_labels], tax.global_), clip.relation)
    return out


# ---------------------------------------------------------------- prediction

@dataclass(frozen=True)
class Prediction:
    individual: list[frozenset[int]]
    partition: list[list[int]]
    social: list[frozenset[int]]
    global_: frozenset[int]


class Predictor(Protocol):
    def predict(self, clip) -> Prediction: ...


class Model:
    def __init__(self, cfg: ModelConfig, store: ParamStore | None = None):
        self.cfg = cfg
        self.store = store if store is not None else init_model(cfg)

    def predict(self, clip, partition_override=None) -> Prediction:
        check_taxonomy(clip, self.cfg)
        out = forward(clip, "eval", self.store, self.cfg, partition_override)
        th = self.cfg.threshold
        return Prediction(decide_labels(out.individual.data, th), out.partition,
                          decide_labels(out.social.data, th), decide_labels(out.global_.data, th)[0])

    def save(self, path) -> None:
        self.store.save(path, kv.to_kv(self.cfg))

    @classmethod
    def load(cls, path) -> "Model":
        store, meta = ParamStore.load(path)
        cfg = kv.from_kv(ModelConfig, kv.parse_kv(meta))
        expect = init_model(cfg)
        if sorted(expect.names()) != sorted(store.names()):
            raise TaxonomyError("checkpoint parameters do not match its configuration")
        for name in expect.names():
            if expect[name].shape != store[name].shape:
                raise TaxonomyError(f"parameter {name} has shape {store[name].shape}, "
                                    f"configuration implies {expect[name].shape}")
        return cls(cfg, store)


class OracleModel:
    """Answers every query with the clip's own ground truth."""

    def predict(self, clip) -> Prediction:
        own = {tuple(sorted(g)): lab for g, lab in zip(clip.partition, clip.group_labels)}
        part = canonical(clip.partition)
        return Prediction(list(clip.individual_labels), part, [own[tuple(g)] for g in part],
                          frozenset(clip.global_labels))


def evaluate(clips, predictor: Predictor, average: str = "example") -> PanoramicScore:
    acc = ScoreAccumulator(average)
    for clip in clips:
        p = predictor.predict(clip)
        acc.add_clip(p.individual, clip.individual_labels, p.partition, p.social, clip.partition,
                     clip.group_labels, p.global_, clip.global_labels)
    return acc.result()


# ---------------------------------------------------------------- training

def _batch_loss(batch, store: ParamStore, cfg: ModelConfig) -> tuple[Tensor, LossBreakdown]:
    total, parts = None, []
    for clip in batch:
        out = forward(clip, "train", store, cfg)
        total = out.loss if total is None else total + out.loss
        parts.append(out.breakdown)
    mean = {k: sum(b.as_dict()[k] for b in parts) / len(parts) for k in ("L_i", "L_s", "L_g", "L_d", "total")}
    return total * (1.0 / len(batch)), LossBreakdown(**mean)


def _check_finite(br: LossBreakdown, epoch: int) -> None:
    for key, value in br.as_dict().items():
        if key != "total" and not math.isfinite(value):
            raise NonFiniteLossError(key, value, epoch)
    if not math.isfinite(br.total):
        raise NonFiniteLossError("total", br.total, epoch)


@dataclass
class TrainLog:
    epochs: list[LossBreakdown] = field(default_factory=list)

    def to_text(self) -> str:
        lines = []
        for e, br in enumerate(self.epochs):
            lines.append(f"epoch={e} " + " ".join(f"{k}={v!r}" for k, v in br.as_dict().items()))
        return "\n".join(lines) + ("\n" if lines else "")


def train_loop(clips, model: Model, tcfg: TrainConfig) -> TrainLog:
    """Seeded-shuffle minibatch Adam; one log entry (mean breakdown) per epoch."""
    tcfg.validate()
    clips = list(clips)
    if not clips:
        raise ValueError("training needs at least one clip")
    for clip in clips:
        check_taxonomy(clip, model.cfg)
    rng = np.random.default_rng(tcfg.seed)
    log = TrainLog()
    store = model.store
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(clips))
        sums = dict.fromkeys(("L_i", "L_s", "L_g", "L_d", "total"), 0.0)
        for start in range(0, len(order), tcfg.batch_size):
            batch = [clips[i] for i in order[start:start + tcfg.batch_size]]
            store.zero_grad()
            loss, br = _batch_loss(batch, store, model.cfg)
            _check_finite(br, epoch)
            backward(loss)
            adam_step(store, store.grads(), tcfg.lr, weight_decay=tcfg.weight_decay)
            for k, v in br.as_dict().items():
                sums[k] += v * len(batch)
        log.epochs.append(LossBreakdown(**{k: v / len(clips) for k, v in sums.items()}))
    return log


# ---------------------------------------------------------------- no-learning reference

def _expected_label_prf(gt: frozenset[int], n_classes: int) -> tuple[float, float, float]:
    """Expected (P, R, F) of a predictor that keeps each class with probability 1/2.

    An empty draw falls back to one uniformly chosen class.
    """
    classes = range(n_classes)
    total = 2 ** n_classes
    ep = er = ef = 0.0
    outcomes = [(frozenset(s), 1.0 / total) for k in range(1, n_classes + 1) for s in combinations(classes, k)]
    outcomes += [(frozenset({c}), 1.0 / (total * n_classes)) for c in classes]
    for pred, w in outcomes:
        hit = len(pred & gt)
        p, r = hit / len(pred), hit / len(gt)
        ep += w * p
        er += w * r
        ef += w * harmonic(p, r)
    return ep, er, ef


def prior_baseline(clips, taxonomy: LabelTaxonomy) -> PanoramicScore:
    """Expected score of a label-coin-flip predictor that puts everyone in one group.

    This is what an untrained network with near-zero logits and a flat
    relation affinity amounts to.
    """
    clips = list(clips)
    ind = [_expected_label_prf(frozenset(s), taxonomy.individual) for c in clips for s in c.individual_labels]
    glob = [_expected_label_prf(frozenset(c.global_labels), taxonomy.global_) for c in clips]
    sp = sr = 0.0
    n_pred = n_gt = 0
    for c in clips:
        for g, lab in zip(c.partition, c.group_labels):
            if 2 * len(g) > c.n:  # only a majority group overlaps "everyone" by more than half
                p, r, _ = _expected_label_prf(frozenset(lab), taxonomy.social)
                sp += p
                sr += r
        n_pred += 1
        n_gt += len(c.partition)

    def mean(rows, k):
        return sum(r[k] for r in rows) / len(rows) if rows else 0.0

    i = PRF(mean(ind, 0), mean(ind, 1), mean(ind, 2))
    g = PRF(mean(glob, 0), mean(glob, 1), mean(glob, 2))
    p = sp / n_pred if n_pred else 0.0
    r = sr / n_gt if n_gt else 0.0
    return overall_score(i, PRF(p, r, harmonic(p, r)), g)


def load_config(path, cls=ModelConfig):
    return kv.from_kv(cls, kv.parse_kv(Path(path).read_text()))
