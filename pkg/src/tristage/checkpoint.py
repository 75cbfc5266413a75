"""Checkpoint archive.

A checkpoint is one ``torch.save`` file holding a plain dict::

    schema        int, currently 1
    model_config  ModelConfig.to_dict()
    state_dict    model parameters and buffers, keys namespaced
                  stem.* leaf1.* leaf2.* mfem.* head1.* bem.* mgfm.*
    optimizer     optimizer state dict, or None
    step          number of completed optimisation steps
    run_config    RunConfig text form, or ""

Only tensors and plain Python values are stored, so the file loads with
``torch.load(weights_only=True)``.
"""
from __future__ import annotations

from pathlib import Path

import torch

from .config import ModelConfig
from .model import ThreeStageNet

SCHEMA = 1
NAMESPACES = ("stem.", "leaf1.", "leaf2.", "mfem.", "head1.", "bem.", "mgfm.")


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: ThreeStageNet, optimizer=None, step=0, run_text=""):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "schema": SCHEMA,
        "model_config": model.model_cfg.to_dict(),
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "step": int(step),
        "run_config": run_text,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def read_checkpoint(path) -> dict:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or "schema" not in blob:
        raise CheckpointError(f"{path} is not a tristage checkpoint")
    if blob["schema"] != SCHEMA:
        raise CheckpointError(f"{path}: schema {blob['schema']} is not supported (expected {SCHEMA})")
    stray = [k for k in blob["state_dict"] if not k.startswith(NAMESPACES)]
    if stray:
        raise CheckpointError(f"{path}: keys outside the known namespaces, e.g. {stray[:3]}")
    return blob


def load_model(path) -> ThreeStageNet:
    blob = read_checkpoint(path)
    model = ThreeStageNet(ModelConfig.from_dict(blob["model_config"]))
    model.load_state_dict(blob["state_dict"])
    return model
