"""Training loop with poly learning-rate decay and deterministic resume."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_model, read_checkpoint, save_checkpoint
from .data import (DataError, FolderDataset, SyntheticSpec, TrainView, collate,
                   materialize_synthetic)
from .loss import total_loss
from .model import build_model
from .backbone import load_resnet_weights
from .runconfig import RunConfig

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


class ResourceError(RuntimeError):
    pass


def poly_lr(base, step, max_steps, power=0.9):
    return base * (1 - step / max_steps) ** power


def synthetic_spec(run: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(seed=run.synthetic_seed, count=run.synthetic_count,
                         size=run.input_size, fg_range=(run.synthetic_fg_min, run.synthetic_fg_max),
                         similarity=run.synthetic_similarity)


def training_set(run: RunConfig, out_dir: Path):
    """All training roots concatenated; a synthetic set is written to disk first."""
    roots = [Path(r) for r in run.train_roots]
    if run.synthetic_count > 0:
        roots.append(materialize_synthetic(synthetic_spec(run), out_dir / "synthetic"))
    if not roots:
        raise DataError("no training data: set train_roots or synthetic_count")
    parts = [FolderDataset(r, run.input_size) for r in roots]
    for r, p in zip(roots, parts):
        if len(p) == 0:
            raise DataError(f"{r} contains no image/mask pairs")
    return parts[0] if len(parts) == 1 else torch.utils.data.ConcatDataset(parts)


class StepSampler(torch.utils.data.Sampler):
    """Batches of ``(epoch, index)`` keys from ``start`` to ``stop``.

    Each epoch is a permutation seeded from (seed, epoch); the trailing
    partial batch is dropped. Batch ``k`` is a pure function of (seed, k).
    """

    def __init__(self, n, batch_size, seed, start, stop):
        self.n, self.bs, self.seed = n, min(batch_size, n), seed
        self.per_epoch = n // self.bs
        self.start, self.stop = start, stop

    def batch(self, step):
        epoch, pos = divmod(step, self.per_epoch)
        perm = np.random.default_rng([self.seed, epoch]).permutation(self.n)
        return [(epoch, int(i)) for i in perm[pos * self.bs:(pos + 1) * self.bs]]

    def __iter__(self):
        for step in range(self.start, self.stop):
            yield self.batch(step)

    def __len__(self):
        return self.stop - self.start


@dataclass
class TrainResult:
    steps: int
    final_loss: float
    checkpoint: Path
    log_path: Path
    seconds: float


def _make_optimizer(model, run):
    return torch.optim.Adam(model.parameters(), lr=run.lr, weight_decay=run.weight_decay)


def train(run: RunConfig, resume=None, stop_at=None, progress=None) -> TrainResult:
    """Train according to ``run``; outputs go to ``run.output_dir``.

    ``resume`` continues from a checkpoint written by an earlier call with the
    same config. ``stop_at`` ends the run early after that many total steps
    without changing the schedule (used to cut a run in pieces).
    """
    run.resolve()
    out = Path(run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / "run.cfg")

    data = training_set(run, out)
    view = TrainView(data, seed=run.seed, augment=run.augment)
    bs = min(run.batch_size, len(data))
    per_epoch = len(data) // bs
    max_steps = run.max_steps or run.epochs * per_epoch

    torch.manual_seed(run.seed)
    if resume:
        model = load_model(resume)
        blob = read_checkpoint(resume)
        start = blob["step"]
        optimizer = _make_optimizer(model, run)
        if blob["optimizer"] is not None:
            optimizer.load_state_dict(blob["optimizer"])
    else:
        model = build_model(run.model_config(), seed=run.seed)
        if run.pretrained:
            sd = torch.load(run.pretrained, map_location="cpu", weights_only=True)
            load_resnet_weights(model, sd, run.shared_leaf_init)
        start = 0
        optimizer = _make_optimizer(model, run)
    stop = min(max_steps, stop_at or max_steps)

    sampler = StepSampler(len(data), bs, run.seed, start, stop)
    loader = torch.utils.data.DataLoader(view, batch_sampler=sampler, collate_fn=collate,
                                         num_workers=run.workers)
    log_path = out / "train_log.tsv"
    fresh = start == 0 or not log_path.exists()
    logf = open(log_path, "w" if fresh else "a")
    header_written = not fresh
    ckpt = out / "checkpoint.pt"
    loss_value = float("nan")
    t0 = time.perf_counter()
    model.train()
    try:
        for step, (images, masks, _) in zip(range(start, stop), loader):
            lr = poly_lr(run.lr, step, max_steps, run.lr_power)
            for g in optimizer.param_groups:
                g["lr"] = lr
            try:
                outputs = model(images)
                loss, terms = total_loss(outputs, masks)
            except RuntimeError as exc:
                if "out of memory" in str(exc).lower():
                    raise ResourceError(
                        f"out of memory at batch_size={run.batch_size}, input_size={run.input_size}") from exc
                raise
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                raise NumericError(f"non-finite loss at step {step + 1}: {loss_value}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()

            if not header_written:
                logf.write("\t".join(["step", "lr", "loss"] + list(terms)) + "\n")
                header_written = True
            if (step + 1) % run.log_every == 0 or step + 1 == stop:
                vals = [f"{float(v.detach()):.8f}" for v in terms.values()]
                logf.write("\t".join([str(step + 1), f"{lr:.8e}", f"{loss_value:.8f}"] + vals) + "\n")
                logf.flush()
            if progress is not None:
                progress(step + 1, loss_value)
            if run.checkpoint_every and (step + 1) % run.checkpoint_every == 0:
                save_checkpoint(out / f"step_{step + 1:06d}.pt", model, optimizer, step + 1, run.to_text())
    finally:
        logf.close()
    save_checkpoint(ckpt, model, optimizer, stop, run.to_text())
    return TrainResult(stop, loss_value, ckpt, log_path, time.perf_counter() - t0)
