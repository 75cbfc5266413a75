"""Multi-scale feature enhancement: shortcut + serial pooled conv branches
(+ non-local attention on the deepest level), summed element-wise."""
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError, MfemConfig
from .layers import ConvNormAct, resize


def avg_pool(x, k):
    """k x k mean pool with stride k; ragged edge windows average their valid pixels."""
    if k == 1:
        return x
    return F.avg_pool2d(x, k, k, ceil_mode=True)


class NonLocalBlock(nn.Module):
    """Spatial self-attention over all h*w positions.

    With q, k of shape (16, n) and v of shape (C, n), the attention map is
    ``S = softmax(q^T k)`` normalised over its first axis, so every column of
    S sums to one and output position j is the convex combination
    ``sum_i v[:, i] * S[i, j]``.
    """

    def __init__(self, in_ch, channels=64, qk_channels=16, max_positions=4096, norm="batch"):
        super().__init__()
        self.max_positions = max_positions
        self.reduce = ConvNormAct(in_ch, channels, 1, norm=norm)
        self.query = nn.Conv2d(channels, qk_channels, 1)
        self.key = nn.Conv2d(channels, qk_channels, 1)
        self.value = nn.Conv2d(channels, channels, 1)

    def attention(self, f):
        q = self.query(f).flatten(2)
        k = self.key(f).flatten(2)
        return torch.softmax(q.transpose(1, 2) @ k, dim=1)

    def forward(self, x, extra=None):
        h, w = x.shape[-2:]
        if h * w > self.max_positions:
            raise ConfigError(
                f"non-local block enabled on a {h}x{w} feature ({h * w} positions > "
                f"{self.max_positions}); it is meant for the deepest level only")
        f = self.reduce(x)
        if extra is not None:
            f = f + extra
        s = self.attention(f)
        v = self.value(f).flatten(2)
        return (v @ s).view(v.shape[0], v.shape[1], h, w)


class Branch(nn.Module):
    def __init__(self, in_ch, channels, dilation, norm):
        super().__init__()
        self.reduce = ConvNormAct(in_ch, channels, 1, norm=norm)
        self.conv = ConvNormAct(channels, channels, 3, norm=norm)
        self.dilated = ConvNormAct(channels, channels, 3, dilation=dilation, norm=norm)

    def refine(self, f, pool):
        return self.dilated(self.conv(avg_pool(f, pool)))


class ConvBlock(nn.Module):
    """Four pooled branches with pool sizes 8, 4, 2, 1.

    Serial mode feeds each branch output (upsampled back to h x w) into the
    next branch's input and returns the last output. Parallel mode is the
    'MFEM-Parallel' ablation: branches only see their own reduction and the
    upsampled outputs are summed.
    """

    def __init__(self, in_ch, channels=64, pool_sizes=(8, 4, 2, 1), dilation=2,
                 parallel=False, norm="batch"):
        super().__init__()
        self.pool_sizes = tuple(pool_sizes)
        self.parallel = parallel
        self.branches = nn.ModuleList(
            Branch(in_ch, channels, dilation, norm) for _ in self.pool_sizes)

    def forward(self, x, extra=None):
        size = x.shape[-2:]
        prev = None
        total = 0
        for branch, pool in zip(self.branches, self.pool_sizes):
            f = branch.reduce(x)
            if extra is not None:
                f = f + extra
            if prev is not None and not self.parallel:
                f = f + prev
            out = resize(branch.refine(f, pool), size)
            if self.parallel:
                total = total + out
            else:
                prev = out
        return total if self.parallel else prev


class MFEM(nn.Module):
    """f_out = shortcut(x) + conv_block(x) [+ non_local(x)].

    ``extra`` is a 64-channel map added right after every 1x1 reduction; the
    decoders use it to sum in the upsampled output of the deeper level, which
    has a different channel count from the raw encoder feature.
    """

    def __init__(self, in_ch, cfg: MfemConfig = None, norm="batch"):
        super().__init__()
        cfg = cfg or MfemConfig()
        cfg.validate()
        self.shortcut = ConvNormAct(in_ch, cfg.out_channels, 1, norm=norm)
        self.conv_block = ConvBlock(in_ch, cfg.out_channels, cfg.pool_sizes, cfg.dilation,
                                    cfg.parallel, norm)
        self.non_local = None
        if cfg.use_nonlocal:
            self.non_local = NonLocalBlock(in_ch, cfg.out_channels, cfg.qk_channels,
                                           cfg.nonlocal_max_positions, norm)

    def forward(self, x, extra=None):
        s = self.shortcut(x)
        if extra is not None:
            s = s + extra
        out = s + self.conv_block(x, extra)
        if self.non_local is not None:
            out = out + self.non_local(x, extra)
        return out


class PlainConv(nn.Module):
    """The 'w/o MFEM' stand-in: a single 3x3 conv."""

    def __init__(self, in_ch, channels=64, norm="batch"):
        super().__init__()
        self.conv = ConvNormAct(in_ch, channels, 3, norm=norm)

    def forward(self, x, extra=None):
        out = self.conv(x)
        return out if extra is None else out + extra


def build_mfem(model_cfg, in_ch, use_nonlocal=False):
    if model_cfg.has("wo_mfem"):
        return PlainConv(in_ch, model_cfg.channels, model_cfg.norm)
    return MFEM(in_ch, model_cfg.mfem(use_nonlocal), model_cfg.norm)
