"""Boundary enhancement module used at each level of the second decoder."""
import torch
import torch.nn as nn

from .layers import ChannelAttention, ConvNormAct, SpatialAttention, conv3x3


def _check_same_size(feature, edge):
    if tuple(edge.shape[-2:]) != tuple(feature.shape[-2:]):
        raise ValueError(
            f"boundary map is {tuple(edge.shape[-2:])} but features are "
            f"{tuple(feature.shape[-2:])}; upsample the boundary map to the feature size first")


class BEM(nn.Module):
    """Fuse a boundary map into decoder features and predict mask/boundary.

    f     = C3(cat(edge, f_low + f_high))
    f_ca  = CA(f) * f
    f_out = SA(f_ca) * f_ca
    edge  = C3(f_out);  mask = C3(C3(C3(f_out)))

    The two inner convs of the mask head carry norm + ReLU; the last one is a
    plain conv emitting logits.
    """

    def __init__(self, channels=64, reduction=4, use_edge=True, norm="batch"):
        super().__init__()
        self.use_edge = use_edge
        self.fuse = ConvNormAct(channels + (1 if use_edge else 0), channels, 3, norm=norm)
        self.ca = ChannelAttention(channels, reduction)
        self.sa = SpatialAttention(7)
        self.edge_head = conv3x3(channels, 1)
        self.mask_head = nn.Sequential(
            ConvNormAct(channels, channels, 3, norm=norm),
            ConvNormAct(channels, channels, 3, norm=norm),
            conv3x3(channels, 1),
        )

    def forward(self, f_low, edge_in, f_high=None):
        f = f_low if f_high is None else f_low + f_high
        if self.use_edge:
            _check_same_size(f, edge_in)
            f = torch.cat([edge_in, f], dim=1)
        f = self.fuse(f)
        f_ca = self.ca(f) * f
        f_out = self.sa(f_ca) * f_ca
        return self.mask_head(f_out), self.edge_head(f_out), f_out


class PlainBEM(nn.Module):
    """The 'w/o BEM' stand-in: one 3x3 conv, plus the 1-channel heads the
    deep supervision needs. The boundary input is ignored."""

    def __init__(self, channels=64, norm="batch"):
        super().__init__()
        self.fuse = ConvNormAct(channels, channels, 3, norm=norm)
        self.edge_head = conv3x3(channels, 1)
        self.mask_head = conv3x3(channels, 1)

    def forward(self, f_low, edge_in=None, f_high=None):
        f = f_low if f_high is None else f_low + f_high
        f_out = self.fuse(f)
        return self.mask_head(f_out), self.edge_head(f_out), f_out


def build_bem(model_cfg):
    if model_cfg.has("wo_bem"):
        return PlainBEM(model_cfg.channels, model_cfg.norm)
    return BEM(model_cfg.channels, model_cfg.ca_reduction,
               use_edge=not model_cfg.has("wo_bem_edge"), norm=model_cfg.norm)
