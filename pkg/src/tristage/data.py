"""Datasets on disk, augmentation, and a procedural camouflage generator.

Directory convention for every dataset (real or synthetic)::

    root/
      Imgs/<stem>.jpg|.png
      GT/<stem>.png        8-bit mask, foreground where value > 127
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage

log = logging.getLogger(__name__)

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
MASK_THRESHOLD = 127
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp")

# image counts of the public benchmarks (train split = 1,000 CAMO + 3,040 COD10K)
DATASET_SIZES = {
    "CAMO": {"total": 1250, "train": 1000, "test": 250},
    "COD10K": {"total": 5066, "train": 3040, "test": 2026},
    "NC4K": {"total": 4121, "train": 0, "test": 4121},
}


class DataError(RuntimeError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # float32 (3, H, W), normalised with ImageNet statistics
    mask: np.ndarray   # float32 (H, W), values in {0, 1}
    name: str = ""

    def tensors(self):
        return torch.from_numpy(self.image), torch.from_numpy(self.mask)[None]


def check_split_size(dataset, split, count):
    expected = DATASET_SIZES.get(dataset, {}).get(split)
    if expected is None:
        raise DataError(f"no expected size recorded for {dataset}/{split}")
    if count != expected:
        raise DataError(f"{dataset}/{split} has {count} image/mask pairs, expected {expected}")


def to_sample(rgb, mask, size, name="", normalize=True) -> Sample:
    """Resize an RGB uint8 image (bilinear) and its mask (nearest) to size x size."""
    img = Image.fromarray(np.asarray(rgb, dtype=np.uint8), "RGB").resize((size, size), Image.BILINEAR)
    m = np.asarray(mask)
    if m.dtype == bool:
        m = m.astype(np.uint8) * 255
    m = Image.fromarray(m.astype(np.uint8), "L").resize((size, size), Image.NEAREST)
    x = np.asarray(img, dtype=np.float32) / 255.0
    if normalize:
        x = (x - IMAGENET_MEAN) / IMAGENET_STD
    return Sample(np.ascontiguousarray(x.transpose(2, 0, 1)),
                  (np.asarray(m) > MASK_THRESHOLD).astype(np.float32), name)


def read_mask(path) -> np.ndarray:
    """Binary mask at its original resolution."""
    return np.asarray(Image.open(path).convert("L")) > MASK_THRESHOLD


def load_sample(image_path, mask_path, size=704, normalize=True, skip_errors=False) -> Optional[Sample]:
    try:
        rgb = np.asarray(Image.open(image_path).convert("RGB"))
        mask = np.asarray(Image.open(mask_path).convert("L"))
    except (OSError, ValueError) as exc:
        if skip_errors:
            log.warning("skipping %s: %s", image_path, exc)
            return None
        raise DataError(f"cannot read {image_path} / {mask_path}: {exc}") from exc
    if rgb.shape[:2] != mask.shape[:2]:
        msg = f"{image_path}: image {rgb.shape[:2]} and mask {mask.shape[:2]} differ in size"
        if skip_errors:
            log.warning("skipping: %s", msg)
            return None
        raise DataError(msg)
    return to_sample(rgb, mask, size, Path(image_path).stem, normalize)


def list_pairs(root) -> Tuple[List[Tuple[Path, Path]], List[str]]:
    """Matching (image, mask) paths under root/Imgs and root/GT, sorted by stem,
    plus the stems of images that have no mask."""
    root = Path(root)
    img_dir, gt_dir = root / "Imgs", root / "GT"
    if not img_dir.is_dir() or not gt_dir.is_dir():
        raise DataError(f"{root} must contain Imgs/ and GT/ directories")
    masks = {p.stem: p for p in gt_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES}
    pairs, missing = [], []
    for p in sorted(img_dir.iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        if p.stem in masks:
            pairs.append((p, masks[p.stem]))
        else:
            missing.append(p.stem)
    return pairs, missing


# -- augmentation ------------------------------------------------------------

def hflip(sample: Sample) -> Sample:
    return replace(sample, image=np.ascontiguousarray(sample.image[:, :, ::-1]),
                   mask=np.ascontiguousarray(sample.mask[:, ::-1]))


def rotate(sample: Sample, degrees: float) -> Sample:
    """Rotate image (bilinear, border padding) and mask (nearest, zero padding)
    about the centre by the same angle."""
    if degrees == 0:
        return sample
    a = math.radians(degrees)
    theta = torch.tensor([[math.cos(a), -math.sin(a), 0.0],
                          [math.sin(a), math.cos(a), 0.0]], dtype=torch.float32)[None]
    img, mask = sample.tensors()
    grid = F.affine_grid(theta, (1, 1, *mask.shape[-2:]), align_corners=False)
    img = F.grid_sample(img[None], grid, mode="bilinear", padding_mode="border", align_corners=False)
    mask = F.grid_sample(mask[None], grid, mode="nearest", padding_mode="zeros", align_corners=False)
    return replace(sample, image=img[0].numpy(), mask=mask[0, 0].numpy())


def clip_border(sample: Sample, top, bottom, left, right) -> Sample:
    """Cut the given fractions off each side and resize back to the original size."""
    h, w = sample.mask.shape
    y0, y1 = int(round(top * h)), h - int(round(bottom * h))
    x0, x1 = int(round(left * w)), w - int(round(right * w))
    img, mask = sample.tensors()
    img = F.interpolate(img[None, :, y0:y1, x0:x1], size=(h, w), mode="bilinear", align_corners=False)
    mask = F.interpolate(mask[None, :, y0:y1, x0:x1], size=(h, w), mode="nearest")
    return replace(sample, image=img[0].numpy(), mask=mask[0, 0].numpy())


def augment(sample: Sample, rng: np.random.Generator, max_rotation=15.0, max_clip=0.1,
            p_flip=0.5) -> Sample:
    """Random horizontal flip, rotation and border clipping, applied jointly to
    image and mask. All random draws happen up front in a fixed order."""
    flip = rng.random() < p_flip
    angle = rng.uniform(-max_rotation, max_rotation)
    clips = rng.uniform(0.0, max_clip, size=4)
    if flip:
        sample = hflip(sample)
    sample = rotate(sample, angle)
    return clip_border(sample, *clips)


class FolderDataset(torch.utils.data.Dataset):
    """Image/mask pairs from root/{Imgs,GT}, in sorted stem order."""

    def __init__(self, root, size, skip_errors=False):
        self.root = Path(root)
        self.size = size
        self.pairs, self.missing = list_pairs(root)
        if self.missing:
            log.warning("%s: %d images without masks were excluded", root, len(self.missing))
        self.skip_errors = skip_errors

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, index) -> Optional[Sample]:
        img, gt = self.pairs[index]
        return load_sample(img, gt, self.size, skip_errors=self.skip_errors)


class TrainView(torch.utils.data.Dataset):
    """Indexed by ``(epoch, i)``. Sample i in a given epoch is augmented with a
    generator seeded from (seed, epoch, i), so the result does not depend on
    worker count or load order."""

    def __init__(self, base, seed=0, augment=True):
        self.base, self.seed, self.augment = base, seed, augment

    def __len__(self):
        return len(self.base)

    def __getitem__(self, key):
        epoch, index = key
        s = self.base[index]
        if s is None or not self.augment:
            return s
        return augment(s, np.random.default_rng([self.seed, epoch, index]))


# -- synthetic camouflage ------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    count: int = 16
    size: int = 176
    fg_range: Tuple[float, float] = (0.04, 0.25)
    # 0: foreground intensities disjoint from background; 1: same texture statistics
    similarity: float = 0.5

    def __post_init__(self):
        lo, hi = self.fg_range
        if not 0 < lo <= hi < 0.5:
            raise ValueError(f"fg_range {self.fg_range} must satisfy 0 < lo <= hi < 0.5")
        if not 0.0 <= self.similarity <= 1.0:
            raise ValueError("similarity must lie in [0, 1]")


def _texture(rng, size):
    """Smooth multi-octave noise in [0, 1], shape (size, size, 3)."""
    out = np.zeros((size, size, 3))
    for sigma, weight in ((size / 12, 0.5), (size / 30, 0.3), (1.5, 0.2)):
        common = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
        for c in range(3):
            own = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
            layer = 0.6 * common + 0.4 * own
            layer = (layer - layer.min()) / (layer.max() - layer.min() + 1e-12)
            out[..., c] += weight * layer
    return out


def _blob(rng, size, fraction):
    """Star-shaped smooth blob covering ``fraction`` of the image (to the pixel)."""
    ks = np.arange(2, 5)
    amps = rng.uniform(0.0, 0.15, size=ks.size)
    phases = rng.uniform(0, 2 * np.pi, size=ks.size)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    target = fraction * size * size

    def shape(radius, cy, cx):
        dy, dx = yy - cy, xx - cx
        th = np.arctan2(dy, dx)
        r = radius * (1 + (amps[:, None, None] * np.cos(ks[:, None, None] * th + phases[:, None, None])).sum(0))
        return dy * dy + dx * dx <= r * r

    lo, hi = 0.5, size
    for _ in range(60):
        mid = (lo + hi) / 2
        if shape(mid, size / 2, size / 2).sum() < target:
            lo = mid
        else:
            hi = mid
    radius = hi
    reach = radius * (1 + amps.sum()) + 1
    span = max(0.0, size / 2 - reach)
    cy, cx = size / 2 + rng.uniform(-span, span, size=2)
    return shape(radius, cy, cx)


def synthesize_pair(spec: SyntheticSpec, index: int):
    """(rgb uint8 (H, W, 3), mask bool (H, W)) for one index; pure in (spec, index)."""
    rng = np.random.default_rng([spec.seed, index])
    frac = rng.uniform(*spec.fg_range)
    mask = _blob(rng, spec.size, frac)
    lo, hi = spec.fg_range
    got = mask.mean()
    if not lo <= got <= hi:
        # pixel rounding pushed it outside the range: rescale toward the middle
        mask = _blob(np.random.default_rng([spec.seed, index, 1]), spec.size, (lo + hi) / 2)
    bg = 0.45 * _texture(rng, spec.size)
    camo = 0.45 * _texture(rng, spec.size)
    distinct = 0.55 + 0.45 * _texture(rng, spec.size)
    fg = spec.similarity * camo + (1 - spec.similarity) * distinct
    img = np.where(mask[..., None], fg, bg)
    return np.round(img * 255).astype(np.uint8), mask


def generate_synthetic(spec: SyntheticSpec, size=None) -> List[Sample]:
    """Model-ready samples (resized to ``size`` if given, else spec.size)."""
    out = []
    for i in range(spec.count):
        rgb, mask = synthesize_pair(spec, i)
        out.append(to_sample(rgb, mask, size or spec.size, name=f"syn_{i:05d}"))
    return out


def materialize_synthetic(spec: SyntheticSpec, root) -> Path:
    """Write the synthetic set as root/Imgs/*.png + root/GT/*.png."""
    root = Path(root)
    (root / "Imgs").mkdir(parents=True, exist_ok=True)
    (root / "GT").mkdir(parents=True, exist_ok=True)
    for i in range(spec.count):
        rgb, mask = synthesize_pair(spec, i)
        Image.fromarray(rgb, "RGB").save(root / "Imgs" / f"syn_{i:05d}.png")
        Image.fromarray(mask.astype(np.uint8) * 255, "L").save(root / "GT" / f"syn_{i:05d}.png")
    return root


def collate(samples):
    samples = [s for s in samples if s is not None]
    images = torch.from_numpy(np.stack([s.image for s in samples]))
    masks = torch.from_numpy(np.stack([s.mask for s in samples]))[:, None]
    return images, masks, [s.name for s in samples]
