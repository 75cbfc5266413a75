"""Evaluation: run a model (or read saved maps) and write metric reports.

Predictions are compared at the ground-truth's own resolution; model outputs
are bilinearly resized to it. Output files in ``out_dir``::

    summary.csv             one row per report
    records_<name>.csv      per-image scores
    curves_<name>.csv       256-row precision / recall / F table
    missing_<dataset>.txt   images without a mask (excluded)
    pr_curves.png, f_curves.png
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import metrics
from .data import IMAGE_SUFFIXES, list_pairs, load_sample, read_mask
from .model import ThreeStageNet

log = logging.getLogger(__name__)

DECODERS = ("first", "second", "third")


def _safe(name):
    return name.replace("/", "_").replace(" ", "_")


def predict_maps(model: ThreeStageNet, pairs, size, batch_size=4, which=("third",)):
    """Yield ``(stem, {decoder: map at input size}, gt at original size)``."""
    model.eval()
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        samples = [load_sample(i, g, size, skip_errors=True) for i, g in chunk]
        keep = [(c, s) for c, s in zip(chunk, samples) if s is not None]
        if not keep:
            continue
        x = torch.from_numpy(np.stack([s.image for _, s in keep]))
        with torch.no_grad():
            maps = model(x).decoder_predictions()
        for b, ((img, gt), s) in enumerate(keep):
            yield s.name, {k: maps[k][b:b + 1] for k in which}, read_mask(gt)


def to_resolution(prob, shape):
    """(1, 1, h, w) probability tensor → numpy map at ``shape``."""
    if tuple(prob.shape[-2:]) != tuple(shape):
        prob = F.interpolate(prob, size=tuple(shape), mode="bilinear", align_corners=False)
    return prob[0, 0].clamp(0, 1).double().numpy()


def evaluate_model(model, roots, out_dir, per_decoder=False, small=False, batch_size=4,
                   plot=True):
    """Evaluate on each ``root/{Imgs,GT}``; returns the list of reports written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    which = DECODERS if per_decoder else ("third",)
    reports = []
    for root in roots:
        root = Path(root)
        pairs, missing = list_pairs(root)
        _write_missing(out_dir, root.name, missing)
        reps = {k: metrics.MetricReport(f"{root.name}/{k}" if per_decoder else root.name) for k in which}
        for stem, maps, gt in predict_maps(model, pairs, model.model_cfg.input_size, batch_size, which):
            for k in which:
                reps[k].add(to_resolution(maps[k], gt.shape), gt, stem)
        reports += _expand(list(reps.values()), small)
    write_reports(reports, out_dir, plot)
    return reports


def evaluate_predictions(pred_root, gt_roots, out_dir, small=False, plot=True):
    """Score saved 8-bit maps. ``pred_root/<dataset>/<stem>.png`` is matched
    with ``<gt_root>/GT/<stem>.png`` where ``<dataset>`` is the gt root's name;
    with a single gt root, maps may also sit directly in ``pred_root``."""
    pred_root, out_dir = Path(pred_root), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for root in gt_roots:
        root = Path(root)
        pdir = pred_root / root.name
        if not pdir.is_dir() and len(gt_roots) == 1:
            pdir = pred_root
        gts = {p.stem: p for p in (root / "GT").iterdir() if p.suffix.lower() in IMAGE_SUFFIXES}
        preds = {p.stem: p for p in pdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES}
        missing = sorted(set(preds) - set(gts))
        _write_missing(out_dir, root.name, missing)
        rep = metrics.MetricReport(root.name)
        for stem in sorted(set(preds) & set(gts)):
            gt = read_mask(gts[stem])
            pred = Image.open(preds[stem]).convert("L")
            if pred.size != (gt.shape[1], gt.shape[0]):
                pred = pred.resize((gt.shape[1], gt.shape[0]), Image.BILINEAR)
            rep.add(np.asarray(pred, dtype=np.float64) / 255.0, gt, stem)
        reports += _expand([rep], small)
    write_reports(reports, out_dir, plot)
    return reports


def _write_missing(out_dir, name, missing):
    if missing:
        log.warning("%s: %d predictions/images without ground truth excluded", name, len(missing))
        (out_dir / f"missing_{_safe(name)}.txt").write_text("\n".join(missing) + "\n")


def _expand(reports, small):
    if not small:
        return reports
    out = []
    for rep in reports:
        out.append(rep)
        for label, tau in metrics.SMALL_THRESHOLDS.items():
            out.append(rep.subset(tau, f"{rep.name}/{label}"))
    return out


def write_reports(reports, out_dir, plot=True):
    out_dir = Path(out_dir)
    metrics.write_summary(out_dir / "summary.csv", reports)
    curve_files = []
    for rep in reports:
        name = _safe(rep.name)
        metrics.write_records(out_dir / f"records_{name}.csv", rep)
        path = out_dir / f"curves_{name}.csv"
        metrics.write_curves(path, rep)
        if len(rep):
            curve_files.append((rep.name, path))
    if plot and curve_files:
        from .plotting import plot_curves
        plot_curves(curve_files, out_dir)
