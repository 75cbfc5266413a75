"""Batch inference: 8-bit prediction maps in a mirrored layout plus a manifest.

``manifest.txt`` has one tab-separated record per input::

    <input path>  <output path>  box=x0,y0,x1,y1  grid=H,W  fallback=0|1

The box is the (inclusive) crop region on the stem-feature grid of size
``grid``; ``fallback=1`` marks images where nothing was detected and the
whole grid was used.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import IMAGE_SUFFIXES, to_sample
from .evaluate import to_resolution
from .model import ThreeStageNet


def find_images(root):
    root = Path(root)
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def infer(model: ThreeStageNet, input_root, out_dir, batch_size=4, dump_features=False):
    """Predict every image under ``input_root``; returns the manifest path."""
    input_root, out_dir = Path(input_root), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    size = model.model_cfg.input_size
    files = find_images(input_root)
    model.eval()
    lines = []
    for start in range(0, len(files), batch_size):
        chunk = files[start:start + batch_size]
        rgbs = [np.asarray(Image.open(p).convert("RGB")) for p in chunk]
        x = torch.from_numpy(np.stack([
            to_sample(rgb, np.zeros(rgb.shape[:2], bool), size).image for rgb in rgbs]))
        with torch.no_grad():
            out = model(x, return_features=dump_features)
        pred = out.prediction()
        grid = tuple(out.side_mask[3].shape[-2:])
        for b, (src, rgb) in enumerate(zip(chunk, rgbs)):
            rel = src.relative_to(input_root).with_suffix(".png")
            dst = out_dir / rel
            dst.parent.mkdir(parents=True, exist_ok=True)
            prob = to_resolution(pred[b:b + 1], rgb.shape[:2])
            Image.fromarray(np.round(prob * 255).astype(np.uint8), "L").save(dst)
            box = out.boxes[b]
            lines.append("\t".join([
                str(src), str(dst), "box=" + ",".join(map(str, box.as_tuple())),
                f"grid={grid[0]},{grid[1]}", f"fallback={int(box.fallback)}"]))
            if dump_features:
                fpath = out_dir / "features" / rel.with_suffix(".npz")
                fpath.parent.mkdir(parents=True, exist_ok=True)
                np.savez_compressed(fpath, **{k: v[b].numpy() for k, v in out.features.items()})
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    return manifest


def read_manifest(path):
    records = []
    for line in Path(path).read_text().splitlines():
        src, dst, box, grid, fb = line.split("\t")
        records.append({
            "input": src, "output": dst,
            "box": tuple(int(v) for v in box[4:].split(",")),
            "grid": tuple(int(v) for v in grid[5:].split(",")),
            "fallback": fb.endswith("1"),
        })
    return records
