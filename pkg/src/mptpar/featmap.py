"""Stand-in backbone and per-individual feature cropping.

The backbone is two strided patch-mixing stages (4x4 then 2x2, stride 8
overall) with a GELU after each. RoIAlign takes one bilinear sample at the
centre of every output bin, in continuous coordinates with the half-pixel
offset, so a box that exactly covers a feature cell reads back that cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ParamStore, Tensor
from .numerics import tensor as T
from .numerics.ops import init_linear

BACKBONE_STRIDE = 8
_STAGES = (4, 2)


@dataclass
class FeatureMap:
    data: Tensor  # [T, C, H', W']
    stride: float

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValueError("feature map must be [T, C, H', W']")
        if self.data.shape[2] < 2 or self.data.shape[3] < 2:
            raise ValueError("feature map needs at least 2x2 spatial cells")
        if self.stride <= 0:
            raise ValueError("stride must be positive")

    @property
    def shape(self):
        return self.data.shape


def init_backbone(store: ParamStore, channels: int, rng: np.random.Generator, prefix: str = "backbone") -> None:
    # fan-in scaled so pixel-level contrast survives both stages at unit scale
    d1, d2 = 3 * _STAGES[0] ** 2, channels * _STAGES[1] ** 2
    init_linear(store, f"{prefix}.s1", d1, channels, rng, std=np.sqrt(2.0 / d1))
    init_linear(store, f"{prefix}.s2", d2, channels, rng, std=np.sqrt(2.0 / d2))


def _patchify(x: Tensor, p: int) -> Tensor:
    # [T, H, W, C] -> [T, H/p, W/p, p*p*C]
    t, h, w, c = x.shape
    x = T.reshape(x, (t, h // p, p, w // p, p, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (t, h // p, w // p, p * p * c))


def synth_backbone(frames, store: ParamStore, prefix: str = "backbone") -> FeatureMap:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ValueError("frames must be [T, 3, H, W]")
    _, _, h, w = frames.shape
    if h % BACKBONE_STRIDE or w % BACKBONE_STRIDE:
        raise ValueError(f"frame size {h}x{w} is not divisible by stride {BACKBONE_STRIDE}")
    x = Tensor(frames.transpose(0, 2, 3, 1))
    for i, p in enumerate(_STAGES, start=1):
        x = T.gelu(T.linear(_patchify(x, p), store[f"{prefix}.s{i}.w"], store[f"{prefix}.s{i}.b"]))
    return FeatureMap(T.transpose(x, (0, 3, 1, 2)), float(BACKBONE_STRIDE))


def _bilinear_row(y: float, x: float, h: int, w: int) -> np.ndarray:
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    ly, lx = y - y0, x - x0
    row = np.zeros(h * w)
    row[y0 * w + x0] += (1 - ly) * (1 - lx)
    row[y0 * w + x1] += (1 - ly) * lx
    row[y1 * w + x0] += ly * (1 - lx)
    row[y1 * w + x1] += ly * lx
    return row


def sampling_matrix(boxes, scale: float, fh: int, fw: int, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear weights ``[N * out_h * out_w, fh * fw]`` for one frame of boxes."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    mat = np.zeros((len(boxes) * out_h * out_w, fh * fw))
    r = 0
    for x1, y1, x2, y2 in boxes * scale:
        if not (x2 - x1 > 1e-9 and y2 - y1 > 1e-9):
            raise ValueError(f"degenerate box after scaling: {(x1, y1, x2, y2)}")
        bh, bw = (y2 - y1) / out_h, (x2 - x1) / out_w
        for i in range(out_h):
            cy = y1 + (i + 0.5) * bh - 0.5
            for j in range(out_w):
                cx = x1 + (j + 0.5) * bw - 0.5
                mat[r] = _bilinear_row(cy, cx, fh, fw)
                r += 1
    return mat


def roi_align(fm: FeatureMap, boxes, out_h: int, out_w: int) -> Tensor:
    """Crop ``[T, N, C, out_h, out_w]`` features for per-frame boxes ``[T, N, 4]``."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    boxes = np.asarray(boxes, dtype=np.float64)
    t, c, fh, fw = fm.shape
    if boxes.ndim != 3 or boxes.shape[0] != t or boxes.shape[2] != 4:
        raise ValueError(f"boxes must be [{t}, N, 4], got {boxes.shape}")
    n = boxes.shape[1]
    if np.any(boxes[..., 2] <= boxes[..., 0]) or np.any(boxes[..., 3] <= boxes[..., 1]):
        raise ValueError("boxes need x2 > x1 and y2 > y1")
    weights = np.stack([sampling_matrix(boxes[k], 1.0 / fm.stride, fh, fw, out_h, out_w) for k in range(t)])
    flat = T.transpose(T.reshape(fm.data, (t, c, fh * fw)), (0, 2, 1))  # [T, HW, C]
    out = T.matmul(Tensor(weights), flat)  # [T, N*B, C]
    out = T.reshape(out, (t, n, out_h, out_w, c))
    return T.transpose(out, (0, 1, 4, 2, 3))


def init_flatten(store: ParamStore, channels: int, out_h: int, out_w: int, dim: int,
                 rng: np.random.Generator, prefix: str = "roi_proj") -> None:
    d_in = channels * out_h * out_w
    init_linear(store, prefix, d_in, dim, rng, std=1.0 / np.sqrt(d_in))


def flatten_rois(rois: Tensor, store: ParamStore, prefix: str = "roi_proj") -> Tensor:
    t, n = rois.shape[:2]
    flat = T.reshape(rois, (t, n, int(np.prod(rois.shape[2:]))))
    return T.linear(flat, store[f"{prefix}.w"], store[f"{prefix}.b"])
