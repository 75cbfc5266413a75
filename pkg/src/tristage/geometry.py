"""Map post-processing and box geometry between the decoders.

All box coordinates are inclusive integer pixel indices on the stem (f2)
grid. Boxes are not differentiable; gradients reach the cropped features
through their values only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .layers import resize

# guards floor/ceil against float noise such as 2.0000000000000004
_ROUND_SLACK = 1e-9


def _as_nchw(x):
    shape = x.shape
    return x.reshape(-1, 1, shape[-2], shape[-1]), shape


def derive_boundary(m):
    """|avg3x3(m) - m| with a stride-1 pool whose border windows only average
    pixels inside the map. Works on any (..., h, w) tensor.

    Computed as the mean of (neighbour - centre) differences so that constant
    maps give exactly zero in floating point.
    """
    x, shape = _as_nchw(m)
    h, w = shape[-2], shape[-1]
    nb = F.unfold(x, 3, padding=1)  # (N, 9, h*w), zero outside the map
    valid = F.unfold(torch.ones_like(x[:1]), 3, padding=1)
    diff = ((nb - x.flatten(2)) * valid).sum(1, keepdim=True)
    out = diff / valid.sum(1, keepdim=True)
    return out.abs().view(x.shape[0], 1, h, w).reshape(shape)


def normalize_minmax(m):
    """Per-map (m - min) / (max - min) over the last two axes.

    Returns ``(normalized, degenerate)``. Maps with max == min come back as
    zeros with their ``degenerate`` flag set (an empty detection).
    """
    flat = m.flatten(-2)
    lo = flat.min(dim=-1).values[..., None, None]
    hi = flat.max(dim=-1).values[..., None, None]
    span = hi - lo
    degenerate = span <= 0
    safe = torch.where(degenerate, torch.ones_like(span), span)
    out = torch.where(degenerate, torch.zeros_like(m), (m - lo) / safe)
    return out, degenerate[..., 0, 0]


def binarize(m, threshold=0.5):
    """1 where m > threshold (strictly), else 0."""
    return (m > threshold).to(m.dtype)


@dataclass(frozen=True)
class BBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int
    ratio: float = 1.0
    # extent of the detection before expansion, (x_min, y_min, x_max, y_max)
    initial: Optional[Tuple[int, int, int, int]] = None
    fallback: bool = False

    @property
    def width(self):
        return self.x_max - self.x_min + 1

    @property
    def height(self):
        return self.y_max - self.y_min + 1

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def contains(self, other: "BBox") -> bool:
        return (self.x_min <= other.x_min and self.y_min <= other.y_min
                and self.x_max >= other.x_max and self.y_max >= other.y_max)

    def scaled(self, src_grid, dst_grid) -> "BBox":
        """The same region on another grid (inclusive pixel coverage)."""
        sy, sx = dst_grid[0] / src_grid[0], dst_grid[1] / src_grid[1]
        return BBox(
            int(math.floor(self.x_min * sx)), int(math.floor(self.y_min * sy)),
            min(dst_grid[1] - 1, int(math.ceil((self.x_max + 1) * sx)) - 1),
            min(dst_grid[0] - 1, int(math.ceil((self.y_max + 1) * sy)) - 1),
            self.ratio, None, self.fallback)

    @classmethod
    def full(cls, grid, ratio=1.0, fallback=False):
        return cls(0, 0, grid[1] - 1, grid[0] - 1, ratio, None, fallback)


def expand_box(x_min, y_min, x_max, y_max, ratio, grid):
    """Square of side ratio * max(extent) centred on the box, clamped to grid.

    Min edges are floored and max edges ceiled, so the result never shrinks
    below the detected extent unless the grid clamps it.
    """
    xc, yc = (x_min + x_max) / 2, (y_min + y_max) / 2
    half = ratio * max(y_max - y_min, x_max - x_min) / 2
    h, w = grid
    x0 = max(0, math.floor(xc - half + _ROUND_SLACK))
    y0 = max(0, math.floor(yc - half + _ROUND_SLACK))
    x1 = min(w - 1, math.ceil(xc + half - _ROUND_SLACK))
    y1 = min(h - 1, math.ceil(yc + half - _ROUND_SLACK))
    return x0, y0, x1, y1


def compute_bbox(mask_b, ratio, grid) -> BBox:
    """Box around the nonzero pixels of a binary map, expanded by ``ratio``.

    The map is nearest-upsampled to ``grid`` = (H, W) first; its row and column
    sums locate the extreme nonzero rows/cols. Several blobs give one joint
    box. An empty map falls back to the whole grid.
    """
    if isinstance(mask_b, np.ndarray):
        mask_b = torch.from_numpy(np.ascontiguousarray(mask_b))
    m = mask_b.detach().to(torch.float32)
    m = resize(m.reshape(1, 1, *m.shape[-2:]), grid, mode="nearest")[0, 0].cpu().numpy()
    rows = np.flatnonzero(m.sum(axis=1))
    cols = np.flatnonzero(m.sum(axis=0))
    if rows.size == 0:
        return BBox.full(grid, ratio, fallback=True)
    x_min, x_max, y_min, y_max = int(cols[0]), int(cols[-1]), int(rows[0]), int(rows[-1])
    box = expand_box(x_min, y_min, x_max, y_max, ratio, grid)
    return BBox(*box, ratio=ratio, initial=(x_min, y_min, x_max, y_max))


def crop_resize(feature, box: BBox, size):
    """Slice the box out of a (C, H, W) or (1, C, H, W) map, bilinear to size x size."""
    if feature.dim() == 3:
        feature = feature[None]
    patch = feature[..., box.y_min:box.y_max + 1, box.x_min:box.x_max + 1]
    return resize(patch, (size, size))


def restore(patch, box: BBox, grid):
    """Resize a (.., s, s) patch to the box extent and place it on a zero canvas."""
    squeeze = patch.dim() == 3
    if squeeze:
        patch = patch[None]
    h, w = grid
    inner = resize(patch, (box.height, box.width))
    out = F.pad(inner, (box.x_min, w - 1 - box.x_max, box.y_min, h - 1 - box.y_max))
    return out[0] if squeeze else out
