"""Weighted BCE + weighted IoU with deep supervision over every decoder output."""
from __future__ import annotations

from collections import OrderedDict

import torch
import torch.nn.functional as F

from .geometry import binarize, derive_boundary, normalize_minmax
from .layers import resize

WEIGHT_POOL = 31
WEIGHT_GAIN = 5.0
_LOG_FLOOR = 1e-12


def weight_map(target, pool=WEIGHT_POOL, gain=WEIGHT_GAIN):
    """1 + gain * |local mean(target) - target|, pool x pool stride-1 window.

    Windows are clipped to the image (only in-image pixels are averaged), so a
    constant target gets weight 1 everywhere. Values lie in [1, 1 + gain].
    """
    local = F.avg_pool2d(target, pool, stride=1, padding=pool // 2, count_include_pad=False)
    return 1 + gain * (local - target).abs()


def hybrid_loss(pred, target, logits=True, pool=WEIGHT_POOL, gain=WEIGHT_GAIN):
    """Weighted BCE + weighted IoU, each averaged per image, then over the batch.

    ``pred`` is (B, 1, h, w) logits, or probabilities when ``logits=False``
    (used for the restored side outputs, which are exactly 0 off the box).
    """
    if pred.shape != target.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    w = weight_map(target, pool, gain)
    if logits:
        bce = F.binary_cross_entropy_with_logits(pred, target, reduction="none")
        prob = torch.sigmoid(pred)
    else:
        prob = pred
        bce = -(target * torch.log(prob.clamp_min(_LOG_FLOOR))
                + (1 - target) * torch.log((1 - prob).clamp_min(_LOG_FLOOR)))
    wbce = (w * bce).sum(dim=(2, 3)) / w.sum(dim=(2, 3))
    inter = (prob * target * w).sum(dim=(2, 3))
    union = ((prob + target) * w).sum(dim=(2, 3))
    wiou = 1 - (inter + 1) / (union - inter + 1)
    return (wbce + wiou).mean()


def boundary_target(mask, threshold=0.5):
    """Edge ground truth: the boundary operator the network applies to its own
    masks, min-max normalised and binarised."""
    edge, _ = normalize_minmax(derive_boundary(mask))
    return binarize(edge, threshold)


def downsample_target(mask, size):
    return resize(mask, size, mode="nearest")


def total_loss(out, gt, pool=WEIGHT_POOL, gain=WEIGHT_GAIN):
    """Sum of the 5 mask and 5 boundary terms.

    ``gt`` is the (B, 1, H, W) binary mask at input resolution; it is
    nearest-downsampled to each prediction's own resolution and the boundary
    targets are derived there. Returns ``(total, breakdown)`` where
    ``breakdown`` maps term names to scalar tensors that add up to ``total``.
    """
    terms = [("mask/M1", out.m1, True), ("edge/E1", out.e1, False)]
    for i in (3, 4, 5):
        terms.append((f"mask/C{i}", out.side_mask[i], False))
        terms.append((f"edge/C{i}", out.side_edge[i], False))
    terms += [("mask/M3", out.m3, True), ("edge/E3", out.e3, True)]

    targets = {}
    breakdown = OrderedDict()
    for name, pred, is_logit in sorted(terms, key=lambda t: t[0]):
        size = tuple(pred.shape[-2:])
        if size not in targets:
            g = downsample_target(gt, size)
            targets[size] = (g, boundary_target(g))
        g, ge = targets[size]
        target = g if name.startswith("mask") else ge
        breakdown[name] = hybrid_loss(pred, target, logits=is_logit, pool=pool, gain=gain)
    total = sum(breakdown.values())
    return total, breakdown
