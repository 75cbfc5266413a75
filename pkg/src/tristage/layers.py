"""Small building blocks shared by the decoders."""
import torch
import torch.nn as nn
import torch.nn.functional as F


def make_norm(kind, channels):
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "group":
        groups = 4 if channels % 4 == 0 else 1
        return nn.GroupNorm(groups, channels)
    raise ValueError(f"unknown norm {kind!r}")


class ConvNormAct(nn.Sequential):
    """k x k conv -> norm -> ReLU, padded to keep the spatial size."""

    def __init__(self, in_ch, out_ch, kernel_size=3, dilation=1, norm="batch"):
        padding = dilation * (kernel_size - 1) // 2
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel_size, padding=padding, dilation=dilation, bias=False),
            make_norm(norm, out_ch),
            nn.ReLU(inplace=True),
        )


def conv3x3(in_ch, out_ch):
    """Plain 3x3 conv with bias; used for the 1-channel prediction heads."""
    return nn.Conv2d(in_ch, out_ch, 3, padding=1)


def resize(x, size, mode="bilinear"):
    """Resize a (B, C, h, w) tensor to ``size`` = (H, W). No-op when already there."""
    size = tuple(int(s) for s in size)
    if tuple(x.shape[-2:]) == size:
        return x
    if mode == "nearest":
        return F.interpolate(x, size=size, mode="nearest")
    return F.interpolate(x, size=size, mode=mode, align_corners=False)


class ChannelAttention(nn.Module):
    """Per-channel gate: sigmoid(MLP(global average pool)).

    Returns the (B, C, 1, 1) weights; callers multiply them in.
    """

    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        pooled = x.mean(dim=(2, 3))
        w = torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))
        return w[:, :, None, None]


class SpatialAttention(nn.Module):
    """Per-position gate: sigmoid(7x7 conv(mean over channels)) -> (B, 1, h, w)."""

    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(1, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        return torch.sigmoid(self.conv(x.mean(dim=1, keepdim=True)))
