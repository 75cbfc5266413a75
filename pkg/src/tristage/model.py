"""The three-stage network: locate on a pooled view, refine a crop, fuse at
stem resolution.

Checkpoint key namespaces: ``stem.*``, ``leaf1.*``, ``leaf2.*``,
``mfem.{dec1,dec2,dec3}.{level}.*``, ``head1.*``, ``bem.{level}.*``, ``mgfm.*``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import torch
import torch.nn as nn

from .backbone import BifurcatedBackbone
from .bem import build_bem
from .config import ModelConfig
from .geometry import (BBox, binarize, compute_bbox, crop_resize, derive_boundary,
                       normalize_minmax, restore)
from .layers import conv3x3, resize
from .mfem import build_mfem
from .mgfm import build_mgfm

LEVELS = (3, 4, 5)


@dataclass
class StageOutputs:
    """Everything one forward pass produces, at native resolutions.

    Logit-form maps: ``m1``, ``m3``, ``e3`` and the raw crop maps in
    ``crop_mask`` / ``crop_edge``. Probability-form maps: ``e1``, the
    normalized/binary first-stage maps and the restored side outputs.
    """

    image_size: tuple
    m1: torch.Tensor
    e1: torch.Tensor
    m1n: torch.Tensor
    e1n: torch.Tensor
    m1b: torch.Tensor
    e1b: torch.Tensor
    boxes: List[BBox]
    empty: torch.Tensor
    crop_mask: Dict[int, torch.Tensor]
    crop_edge: Dict[int, torch.Tensor]
    side_mask: Dict[int, torch.Tensor]
    side_edge: Dict[int, torch.Tensor]
    m3: torch.Tensor
    e3: torch.Tensor
    features: Optional[dict] = field(default=None, repr=False)

    @property
    def m2(self):
        return self.side_mask[3]

    @property
    def e2(self):
        return self.side_edge[3]

    def _up_logits(self, x):
        # logit maps are resized before the sigmoid so edges stay sharp
        return torch.sigmoid(resize(x, self.image_size))

    def prediction(self):
        """Final mask probability at input resolution (third decoder only)."""
        return self._up_logits(self.m3)

    def emit(self):
        """The six prediction maps as probabilities at input resolution."""
        return {
            "M1": self._up_logits(self.m1), "E1": resize(self.e1, self.image_size),
            "M2": resize(self.m2, self.image_size), "E2": resize(self.e2, self.image_size),
            "M3": self._up_logits(self.m3), "E3": self._up_logits(self.e3),
        }

    def decoder_predictions(self):
        """Mask probabilities of the first, second and third decoder at input resolution."""
        return {"first": self._up_logits(self.m1), "second": resize(self.m2, self.image_size),
                "third": self._up_logits(self.m3)}


class ThreeStageNet(BifurcatedBackbone):
    def __init__(self, cfg: ModelConfig = None):
        cfg = (cfg or ModelConfig()).validate()
        super().__init__(cfg.backbone, cfg.norm)
        self.model_cfg = cfg
        c = cfg.backbone.stage_channels
        levels = {3: c[2], 4: c[3], 5: c[4]}
        self.mfem = nn.ModuleDict({
            "dec1": nn.ModuleDict({str(i): build_mfem(cfg, levels[i], use_nonlocal=i == 5) for i in LEVELS}),
            "dec2": nn.ModuleDict({str(i): build_mfem(cfg, levels[i], use_nonlocal=i == 5) for i in LEVELS}),
            "dec3": nn.ModuleDict({"2": build_mfem(cfg, c[1])}),
        })
        self.head1 = conv3x3(cfg.channels, 1)
        self.bem = nn.ModuleDict({str(i): build_bem(cfg) for i in LEVELS})
        self.mgfm = build_mgfm(cfg)

    # -- stage 1 -------------------------------------------------------------
    def decoder1(self, f3, f4, f5):
        dec = self.mfem["dec1"]
        r5 = dec["5"](f5)
        r4 = dec["4"](f4, extra=resize(r5, f4.shape[-2:]))
        r3 = dec["3"](f3, extra=resize(r4, f3.shape[-2:]))
        m1 = self.head1(r3)
        e1 = derive_boundary(torch.sigmoid(m1))
        return m1, e1, r3

    # -- stage 2 -------------------------------------------------------------
    def decoder2(self, F3, F4, F5, edge_crop, return_features=False):
        dec = self.mfem["dec2"]
        R = {3: dec["3"](F3), 4: dec["4"](F4), 5: dec["5"](F5)}
        masks, edges = {}, {}
        feats = {}
        r_prev = None
        for i in (5, 4, 3):
            size = R[i].shape[-2:]
            if i == 5:
                edge_in, high = resize(edge_crop, size), None
            else:
                edge_in = resize(torch.sigmoid(edges[i + 1]), size)
                high = resize(r_prev, size)
            if return_features and i == 3:
                feats["R4'+R3"] = R[3] + high
                feats["R4'"] = high
            masks[i], edges[i], r_prev = self.bem[str(i)](R[i], edge_in, high)
        if return_features:
            feats["R3'"] = r_prev
        return masks, edges, feats

    # -- full pass -----------------------------------------------------------
    def forward(self, image, return_features=False):
        cfg = self.model_cfg
        f2 = self.stem_forward(image)
        f3, f4, f5 = self.pool_then_leaf1(f2)
        m1, e1, _ = self.decoder1(f3, f4, f5)

        m1n, empty = normalize_minmax(torch.sigmoid(m1))
        e1n, _ = normalize_minmax(e1)
        m1b, e1b = binarize(m1n.detach(), cfg.threshold), binarize(e1n.detach(), cfg.threshold)

        grid = tuple(f2.shape[-2:])
        boxes = [compute_bbox(m1b[b, 0], cfg.expansion_ratio, grid) for b in range(m1b.shape[0])]
        e1n_grid = resize(e1n, grid)
        s = cfg.crop_size
        crops = torch.cat([crop_resize(f2[b], box, s) for b, box in enumerate(boxes)])
        edge_crop = torch.cat([crop_resize(e1n_grid[b], box, s // 8) for b, box in enumerate(boxes)])

        F3, F4, F5 = self.leaf2_forward(crops)
        masks, edges, feats = self.decoder2(F3, F4, F5, edge_crop, return_features)

        def put_back(maps):
            return torch.cat([restore(torch.sigmoid(maps[b:b + 1]), box, grid)
                              for b, box in enumerate(boxes)])

        side_mask = {i: put_back(masks[i]) for i in LEVELS}
        side_edge = {i: put_back(edges[i]) for i in LEVELS}

        r2 = self.mfem["dec3"]["2"](f2)
        out = self.mgfm(r2, side_mask[3], side_edge[3], return_features=return_features)
        if return_features:
            m3, e3, mg_feats = out
            feats.update(mg_feats)
        else:
            m3, e3 = out
        return StageOutputs(
            image_size=tuple(image.shape[-2:]), m1=m1, e1=e1, m1n=m1n, e1n=e1n,
            m1b=m1b, e1b=e1b, boxes=boxes, empty=empty,
            crop_mask=masks, crop_edge=edges, side_mask=side_mask, side_edge=side_edge,
            m3=m3, e3=e3, features=feats if return_features else None)


def build_model(cfg: ModelConfig = None, seed: Optional[int] = None) -> ThreeStageNet:
    if seed is not None:
        torch.manual_seed(seed)
    return ThreeStageNet(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
