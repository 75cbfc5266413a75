"""Bifurcated residual encoder.

A shared stem (conv1 + first residual stage) produces ``f2`` at 1/4 of the
input size. The first leaf sees ``f2`` after an extra 2x2 max-pool; the second
leaf sees the cropped-and-resized stem feature with no extra pool. Both leaves
have identical structure (residual stages 3..5) and separate parameters.

Module and parameter names follow the torchvision ResNet layout
(``conv1``, ``bn1``, ``layer1``..``layer4``) so that a standard ResNet-50
checkpoint maps onto ``stem.*``, ``leaf1.*`` and ``leaf2.*`` by prefix only.
"""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import BackboneConfig, SizingError
from .layers import make_norm

# input images must be a multiple of this so that f2 and f3 sizes are exact
INPUT_MULTIPLE = 16


class Bottleneck(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1, norm="batch"):
        super().__init__()
        mid = out_ch // 4
        self.conv1 = nn.Conv2d(in_ch, mid, 1, bias=False)
        self.bn1 = make_norm(norm, mid)
        self.conv2 = nn.Conv2d(mid, mid, 3, stride=stride, padding=1, bias=False)
        self.bn2 = make_norm(norm, mid)
        self.conv3 = nn.Conv2d(mid, out_ch, 1, bias=False)
        self.bn3 = make_norm(norm, out_ch)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                make_norm(norm, out_ch),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


def _stage(in_ch, out_ch, blocks, stride, norm):
    layers = [Bottleneck(in_ch, out_ch, stride, norm)]
    layers += [Bottleneck(out_ch, out_ch, 1, norm) for _ in range(blocks - 1)]
    return nn.Sequential(*layers)


class Stem(nn.Module):
    """Residual stages 1-2. Only f2 leaves this module."""

    def __init__(self, cfg: BackboneConfig, norm="batch"):
        super().__init__()
        c = cfg.stage_channels
        self.conv1 = nn.Conv2d(3, c[0], 7, stride=2, padding=3, bias=False)
        self.bn1 = make_norm(norm, c[0])
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        self.layer1 = _stage(c[0], c[1], cfg.stage_blocks[1], 1, norm)

    def forward(self, image):
        h, w = image.shape[-2:]
        if h < 32 or w < 32 or h % INPUT_MULTIPLE or w % INPUT_MULTIPLE:
            raise SizingError(
                f"input {h}x{w}: height and width must be >= 32 and a multiple of "
                f"{INPUT_MULTIPLE}; resize the image first")
        f1 = self.relu(self.bn1(self.conv1(image)))
        # f1 is dropped here and never returned
        return self.layer1(self.maxpool(f1))


class Leaf(nn.Module):
    """Residual stages 3-5; returns (f3, f4, f5), each half the previous size."""

    def __init__(self, cfg: BackboneConfig, norm="batch"):
        super().__init__()
        c, b = cfg.stage_channels, cfg.stage_blocks
        self.layer2 = _stage(c[1], c[2], b[2], 2, norm)
        self.layer3 = _stage(c[2], c[3], b[3], 2, norm)
        self.layer4 = _stage(c[3], c[4], b[4], 2, norm)

    def forward(self, x):
        f3 = self.layer2(x)
        f4 = self.layer3(f3)
        f5 = self.layer4(f4)
        return f3, f4, f5


class BifurcatedBackbone(nn.Module):
    def __init__(self, cfg: BackboneConfig = None, norm="batch"):
        super().__init__()
        self.cfg = cfg or BackboneConfig()
        self.cfg.validate()
        self.stem = Stem(self.cfg, norm)
        self.leaf1 = Leaf(self.cfg, norm)
        self.leaf2 = Leaf(self.cfg, norm)

    @property
    def channels(self):
        return list(self.cfg.stage_channels)

    def stem_forward(self, image):
        return self.stem(image)

    def pool_then_leaf1(self, f2):
        if min(f2.shape[-2:]) < 8:
            raise SizingError(f"f2 is {tuple(f2.shape[-2:])}; the first leaf needs at least 8x8")
        return self.leaf1(F.max_pool2d(f2, 2, 2, ceil_mode=True))

    def leaf2_forward(self, crop):
        h, w = crop.shape[-2:]
        if h % 8 or w % 8:
            raise SizingError(f"second-leaf input {h}x{w} must be a multiple of 8")
        return self.leaf2(crop)


def expected_sizes(height, width=None):
    """Feature sizes the first-leaf path produces for an input of this size."""
    width = height if width is None else width
    out = {"f2": (height // 4, width // 4)}
    for i in (3, 4, 5):
        out[f"f{i}"] = (math.ceil(height / 2 ** (i + 1)), math.ceil(width / 2 ** (i + 1)))
    return out


def load_resnet_weights(backbone: BifurcatedBackbone, state_dict, shared_leaf_init=True):
    """Copy a torchvision-layout ResNet state dict into the backbone.

    ``conv1``/``bn1``/``layer1`` go to the stem; ``layer2..4`` go to leaf1 and,
    when ``shared_leaf_init`` is set, to leaf2 as well. Returns the list of
    backbone keys that were filled.
    """
    mapped = {}
    for key, value in state_dict.items():
        if key.startswith(("conv1.", "bn1.", "layer1.")):
            mapped["stem." + key] = value
        elif key.startswith(("layer2.", "layer3.", "layer4.")):
            mapped["leaf1." + key] = value
            if shared_leaf_init:
                mapped["leaf2." + key] = value.clone()
    own = backbone.state_dict()
    bad = [k for k, v in mapped.items() if k not in own or own[k].shape != v.shape]
    if bad:
        raise ValueError(f"checkpoint does not match the backbone shape, e.g. {bad[:3]}")
    own.update(mapped)
    backbone.load_state_dict(own)
    return sorted(mapped)
