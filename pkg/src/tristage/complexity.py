"""Parameter counts, multiply-accumulate totals and wall-clock timing."""
from __future__ import annotations

import time
from dataclasses import dataclass

import torch
import torch.nn as nn

from .mfem import NonLocalBlock
from .model import ThreeStageNet, count_parameters


@dataclass
class ComplexityReport:
    profile: str
    input_size: int
    crop_size: int
    params: int
    macs: int
    latency_s: float = float("nan")
    max_batch: int = 0
    batch_time_s: float = float("nan")

    @property
    def params_m(self):
        return self.params / 1e6

    @property
    def gmacs(self):
        return self.macs / 1e9

    def rows(self):
        return [
            ("profile", self.profile), ("input_size", self.input_size),
            ("crop_size", self.crop_size), ("params_M", f"{self.params_m:.4f}"),
            ("GMACs", f"{self.gmacs:.4f}"), ("latency_s", f"{self.latency_s:.4f}"),
            ("max_batch", self.max_batch), ("batch_time_s", f"{self.batch_time_s:.4f}"),
        ]


def count_macs(model: ThreeStageNet, input_size=None) -> int:
    """Multiply-accumulates of one forward pass on a single image.

    Counts every conv and linear layer from its output shape plus the two
    matrix products inside each non-local block. Norms, activations, pooling
    and resizing are not counted. The count does not depend on where the box
    lands because the crop is always resized to crop_size x crop_size.
    """
    size = input_size or model.model_cfg.input_size
    total = 0

    def conv_hook(mod, inp, out):
        nonlocal total
        k = mod.kernel_size[0] * mod.kernel_size[1]
        total += out[0].numel() * (mod.in_channels // mod.groups) * k

    def linear_hook(mod, inp, out):
        nonlocal total
        total += out[0].numel() * mod.in_features

    def nonlocal_hook(mod, inp, out):
        nonlocal total
        c, h, w = out.shape[1:]
        n = h * w
        total += n * n * mod.query.out_channels + c * n * n

    handles = []
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            handles.append(m.register_forward_hook(conv_hook))
        elif isinstance(m, nn.Linear):
            handles.append(m.register_forward_hook(linear_hook))
        elif isinstance(m, NonLocalBlock):
            handles.append(m.register_forward_hook(nonlocal_hook))
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            model(torch.zeros(1, 3, size, size))
    finally:
        for h in handles:
            h.remove()
        model.train(was_training)
    return total


def _time_forward(model, batch, size, repeats):
    x = torch.randn(batch, 3, size, size)
    with torch.no_grad():
        model(x)
        t0 = time.perf_counter()
        for _ in range(repeats):
            model(x)
    return (time.perf_counter() - t0) / repeats


def benchmark(model: ThreeStageNet, repeats=3, max_batch_cap=8, measure=True) -> ComplexityReport:
    """Parameter and MAC totals, plus (optionally) measured timings.

    ``max_batch`` is the largest power of two up to ``max_batch_cap`` that
    runs without running out of memory; ``batch_time_s`` is the time per
    forward pass at that batch size.
    """
    cfg = model.model_cfg
    rep = ComplexityReport(cfg.profile, cfg.input_size, cfg.crop_size,
                           count_parameters(model), count_macs(model))
    if not measure:
        return rep
    model.eval()
    rep.latency_s = _time_forward(model, 1, cfg.input_size, repeats)
    batch = 1
    while batch * 2 <= max_batch_cap:
        try:
            t = _time_forward(model, batch * 2, cfg.input_size, 1)
        except RuntimeError:
            break
        batch *= 2
        rep.batch_time_s = t
    rep.max_batch = batch
    if batch == 1:
        rep.batch_time_s = rep.latency_s
    return rep
