"""Synthetic panoramic clips with planted groups and three-level labels.

Each individual is a Gaussian blob. Channel 0 carries the blob itself;
channels 1 and 2 carry the blob scaled by a level that encodes the
individual's action labels (even classes in channel 1, odd in channel 2,
one bit each). Group members sit around a shared centre and drift together
in a direction set by the group's first activity label. Global labels are
looked up from the group labels.

Dataset file layout (little-endian)::

    b"PPAR", u32 version, u32 clip count
    per clip: u64 record length, then the record:
        u32 metadata length, metadata (UTF-8 ``key=<json>`` lines),
        frames as float32, row-major [T, 3, H, W]
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grouping import canonical, relation_from_partition

MAGIC = b"PPAR"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


class VersionError(DatasetError):
    pass


class TruncatedError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    n_min: int = 4
    n_max: int = 10
    frames: int = 3
    height: int = 64
    width: int = 64
    groups_min: int = 1
    groups_max: int = 3
    n_individual: int = 6
    n_social: int = 4
    n_global: int = 3
    motion: float = 2.0
    noise: float = 0.01
    sigma: float = 2.5
    box_half: float = 5.0
    clips: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError("need 1 <= n_min <= n_max")
        if not 1 <= self.groups_min <= self.groups_max:
            raise ValueError("need 1 <= groups_min <= groups_max")
        if self.frames < 1 or self.height < 16 or self.width < 16:
            raise ValueError("clip too small")
        if min(self.n_individual, self.n_social, self.n_global) < 1:
            raise ValueError("label taxonomies need at least one class")
        if self.noise < 0 or self.motion < 0 or self.sigma <= 0 or self.box_half <= 0:
            raise ValueError("noise, motion, sigma and box size must be non-negative/positive")
        if self.clips < 0:
            raise ValueError("clip count must be non-negative")


def global_from_social(social: int, n_global: int) -> int:
    """Fixed lookup from a social activity class to the global class it implies."""
    return social % n_global


@dataclass(eq=False)
class ClipSample:
    frames: np.ndarray  # float32 [T, 3, H, W]
    boxes: np.ndarray  # float64 [T, N, 4], (x1, y1, x2, y2) pixels
    individual_labels: list[frozenset[int]]
    partition: list[list[int]]
    group_labels: list[frozenset[int]]
    global_labels: frozenset[int]
    clip_id: str = ""
    seed: int = 0
    relation: np.ndarray = field(init=False)

    def __post_init__(self):
        self.relation = relation_from_partition(self.partition, self.n)

    @property
    def n(self) -> int:
        return self.boxes.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ClipSample):
            return NotImplemented
        return (self.frames.dtype == other.frames.dtype and self.frames.shape == other.frames.shape
                and self.frames.tobytes() == other.frames.tobytes()
                and self.boxes.tobytes() == other.boxes.tobytes() and self.boxes.shape == other.boxes.shape
                and self.individual_labels == other.individual_labels and self.partition == other.partition
                and self.group_labels == other.group_labels and self.global_labels == other.global_labels
                and self.clip_id == other.clip_id and self.seed == other.seed)


def _label_set(rng: np.random.Generator, n_classes: int, max_labels: int = 2) -> frozenset[int]:
    k = int(rng.integers(1, min(max_labels, n_classes) + 1))
    return frozenset(int(c) for c in rng.choice(n_classes, size=k, replace=False))


def texture_levels(labels: frozenset[int], n_classes: int) -> tuple[float, float]:
    """Channel-1/2 intensity encoding a label set as two bit codes."""
    out = []
    for parity in (0, 1):
        classes = list(range(parity, n_classes, 2))
        code = sum(1 << i for i, c in enumerate(classes) if c in labels)
        out.append((1 + code) / (2 ** len(classes) + 1))
    return out[0], out[1]


def _place(spec: GenSpec, groups: list[list[int]], velocities: np.ndarray, rng: np.random.Generator,
           attempts: int = 500) -> np.ndarray:
    n = sum(len(g) for g in groups)
    t_steps = np.arange(spec.frames)[:, None]
    margin = spec.box_half + 0.5
    min_sep = 2 * spec.box_half
    for _ in range(attempts):
        pos0 = np.zeros((n, 2))
        for g, members in enumerate(groups):
            # keep the whole track (including drift) inside the frame
            drift = velocities[g] * (spec.frames - 1)
            lo = np.maximum(margin, margin - drift)
            hi = np.array([spec.width, spec.height]) - margin - np.maximum(drift, 0)
            if np.any(hi <= lo):
                break
            # members sit on a jittered grid so that any group size fits without overlap
            k = len(members)
            cols = int(np.ceil(np.sqrt(k)))
            rows = int(np.ceil(k / cols))
            step = 1.1 * min_sep
            offsets = np.array([[c, r] for r in range(rows) for c in range(cols)][:k], dtype=float)
            offsets = (offsets - offsets.mean(axis=0)) * step
            offsets += rng.uniform(-0.04, 0.04, size=offsets.shape) * min_sep
            half = np.abs(offsets).max(axis=0)
            if np.any(hi - half <= lo + half):
                break
            centre = rng.uniform(lo + half, hi - half)
            pos0[members] = centre + offsets[rng.permutation(k)]
        else:
            vel = np.zeros((n, 2))
            for g, members in enumerate(groups):
                vel[members] = velocities[g]
            track = pos0[None] + t_steps[..., None] * vel[None]  # [T, N, 2]
            diff = track[:, :, None] - track[:, None]
            dist = np.sqrt((diff ** 2).sum(-1)) + np.eye(n)[None] * 1e9
            if np.all(dist >= min_sep):
                return track
    raise InfeasibleError(f"could not place {n} individuals in {len(groups)} groups without overlap")


def generate_clip(spec: GenSpec, seed: int, clip_id: str | None = None) -> ClipSample:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(spec.n_min, spec.n_max + 1))
    g = int(rng.integers(spec.groups_min, min(spec.groups_max, n) + 1))
    order = rng.permutation(n)
    assign = np.empty(n, dtype=int)
    assign[order[:g]] = np.arange(g)
    assign[order[g:]] = rng.integers(0, g, size=n - g)
    groups = canonical([np.where(assign == j)[0].tolist() for j in range(g)])

    group_labels = [_label_set(rng, spec.n_social) for _ in groups]
    individual_labels = [_label_set(rng, spec.n_individual) for _ in range(n)]
    global_labels = frozenset(global_from_social(s, spec.n_global) for labels in group_labels for s in labels)

    angles = np.array([2 * np.pi * min(labels) / spec.n_social for labels in group_labels])
    velocities = spec.motion * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    track = _place(spec, groups, velocities, rng)

    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = rng.normal(0.0, spec.noise, size=(spec.frames, 3, h, w)) if spec.noise > 0 else \
        np.zeros((spec.frames, 3, h, w))
    levels = [texture_levels(lab, spec.n_individual) for lab in individual_labels]
    for t in range(spec.frames):
        for i in range(n):
            cx, cy = track[t, i]
            blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * spec.sigma ** 2))
            frames[t, 0] += blob
            frames[t, 1] += levels[i][0] * blob
            frames[t, 2] += levels[i][1] * blob
    bh = spec.box_half
    boxes = np.concatenate([track - bh, track + bh], axis=-1)
    return ClipSample(frames.astype(np.float32), boxes, individual_labels, groups, group_labels, global_labels,
                      clip_id if clip_id is not None else f"clip-{seed}", int(seed))


def clip_seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2 ** 31 - 1, size=count)]


def generate_dataset(spec: GenSpec, count: int | None = None, seed: int | None = None) -> list[ClipSample]:
    count = spec.clips if count is None else count
    seed = spec.seed if seed is None else seed
    return [generate_clip(spec, s, f"clip-{k:04d}") for k, s in enumerate(clip_seeds(seed, count))]


# ---------------------------------------------------------------- serialization

def _encode_meta(clip: ClipSample) -> bytes:
    items = {
        "clip_id": clip.clip_id,
        "seed": clip.seed,
        "frames_shape": list(clip.frames.shape),
        "boxes": clip.boxes.tolist(),
        "individual_labels": [sorted(s) for s in clip.individual_labels],
        "partition": clip.partition,
        "group_labels": [sorted(s) for s in clip.group_labels],
        "global_labels": sorted(clip.global_labels),
    }
    return "".join(f"{k}={json.dumps(v, separators=(',', ':'))}\n" for k, v in items.items()).encode("utf-8")


def _decode_clip(record: bytes) -> ClipSample:
    (meta_len,) = struct.unpack_from("<I", record, 0)
    meta = {}
    for line in record[4:4 + meta_len].decode("utf-8").splitlines():
        key, value = line.split("=", 1)
        meta[key] = json.loads(value)
    shape = tuple(meta["frames_shape"])
    frames = np.frombuffer(record, dtype="<f4", offset=4 + meta_len).reshape(shape).astype(np.float32)
    boxes = np.array(meta["boxes"], dtype=np.float64).reshape(shape[0], -1, 4)
    return ClipSample(frames, boxes, [frozenset(s) for s in meta["individual_labels"]], meta["partition"],
                      [frozenset(s) for s in meta["group_labels"]], frozenset(meta["global_labels"]),
                      meta["clip_id"], meta["seed"])


def dataset_bytes(clips) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(clips))]
    for clip in clips:
        meta = _encode_meta(clip)
        frames = np.ascontiguousarray(clip.frames, dtype="<f4").tobytes()
        record = struct.pack("<I", len(meta)) + meta + frames
        parts.append(struct.pack("<Q", len(record)) + record)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def parse_dataset(buf: bytes) -> list[ClipSample]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise DatasetError("not a PPAR dataset")
    if len(buf) < 16:
        raise TruncatedError("file ends inside the header")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported dataset version {version} (expected {FORMAT_VERSION})")
    pos = 12
    spans = []
    for _ in range(count):
        if pos + 8 > len(buf) - 4:
            raise TruncatedError("file ends inside a record header")
        (length,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if pos + length > len(buf) - 4:
            raise TruncatedError("file ends inside a record")
        spans.append((pos, pos + length))
        pos += length
    (stored,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != stored or pos != len(buf) - 4:
        raise ChecksumError("checksum mismatch")
    return [_decode_clip(buf[a:b]) for a, b in spans]


def write_dataset(clips, path) -> None:
    Path(path).write_bytes(dataset_bytes(list(clips)))


def read_dataset(path) -> list[ClipSample]:
    return parse_dataset(Path(path).read_bytes())
