"""Third decoder: mask-guided fusion of the high-resolution stem feature."""
import torch
import torch.nn as nn

from .layers import ChannelAttention, ConvNormAct, SpatialAttention, conv3x3


class SFM(nn.Module):
    """Split the feature into groups and refine them one after another.

    Group i (i >= 2) gets the previous group's output added before the conv.
    Each group is concatenated with the mask, convolved, then gated by spatial
    attention and after that by channel attention.
    """

    def __init__(self, channels=64, groups=4, reduction=4, norm="batch"):
        super().__init__()
        if channels % groups:
            raise ValueError(f"{channels} channels cannot be split into {groups} groups")
        self.groups = groups
        width = channels // groups
        self.convs = nn.ModuleList(ConvNormAct(width + 1, width, 3, norm=norm) for _ in range(groups))
        self.sas = nn.ModuleList(SpatialAttention(7) for _ in range(groups))
        self.cas = nn.ModuleList(ChannelAttention(width, reduction) for _ in range(groups))

    def forward(self, r2, mask):
        outs = []
        prev = None
        for i, g in enumerate(torch.chunk(r2, self.groups, dim=1)):
            x = g if prev is None else g + prev
            x = self.convs[i](torch.cat([x, mask], dim=1))
            x = x * self.sas[i](x)
            x = x * self.cas[i](x)
            outs.append(x)
            prev = x
        return torch.cat(outs, dim=1)


class ConcatFusion(nn.Module):
    """The 'w/o SFM' stand-in: concat feature and mask, one 3x3 conv."""

    def __init__(self, channels=64, norm="batch"):
        super().__init__()
        self.conv = ConvNormAct(channels + 1, channels, 3, norm=norm)

    def forward(self, r2, mask):
        return self.conv(torch.cat([r2, mask], dim=1))


class MGFM(nn.Module):
    """Maps (R2, M2, E2) at stem resolution to final mask/boundary logits.

    Unlike the SFM groups, the trunk applies channel attention before spatial
    attention.
    """

    def __init__(self, channels=64, boundary_channels=64, groups=4, reduction=4,
                 use_sfm=True, use_edge=True, norm="batch"):
        super().__init__()
        self.use_edge = use_edge
        if use_sfm:
            self.sfm = SFM(channels, groups, reduction, norm)
        else:
            self.sfm = ConcatFusion(channels, norm)
        self.ca = ChannelAttention(channels, reduction)
        self.sa = SpatialAttention(7)
        self.boundary = ConvNormAct(channels, boundary_channels, 3, norm=norm)
        self.edge_fuse = ConvNormAct(boundary_channels + (1 if use_edge else 0), channels, 3, norm=norm)
        self.refine = ConvNormAct(channels, channels, 3, norm=norm)
        self.mask_head = conv3x3(channels, 1)
        self.edge_head = conv3x3(channels, 1)

    def forward(self, r2, m2, e2, return_features=False):
        if not (r2.shape[-2:] == m2.shape[-2:] == e2.shape[-2:]):
            raise ValueError(
                f"MGFM inputs disagree in size: R2 {tuple(r2.shape[-2:])}, "
                f"M2 {tuple(m2.shape[-2:])}, E2 {tuple(e2.shape[-2:])}")
        f_f = self.sfm(r2, m2)
        f_ca = f_f * self.ca(f_f)
        f_a = f_ca * self.sa(f_ca)
        b = self.boundary(f_a)
        f_e = self.edge_fuse(torch.cat([b, e2], dim=1) if self.use_edge else b)
        f_r = f_a + self.refine(f_a + f_e)
        m3, e3 = self.mask_head(f_r), self.edge_head(f_e)
        if return_features:
            return m3, e3, {"R2": r2, "f_f": f_f, "f_a": f_a, "f_e": f_e, "f_r": f_r}
        return m3, e3


def build_mgfm(model_cfg):
    return MGFM(model_cfg.channels, model_cfg.boundary_channels, model_cfg.sfm_groups,
                model_cfg.ca_reduction, use_sfm=not model_cfg.has("wo_sfm"),
                use_edge=not model_cfg.has("wo_mgfm_edge"), norm=model_cfg.norm)
