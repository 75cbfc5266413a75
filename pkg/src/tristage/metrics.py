"""Segmentation quality measures for camouflaged-object maps.

Conventions (pinned so results are reproducible):

* ``pred`` is a float map in [0, 1]; ``gt`` is boolean.
* S-measure: alpha = 0.5. Object scores use the sample standard deviation
  (ddof=1, 0 for a single pixel). The region split uses the foreground
  centroid rounded half-up, plus one (the centroid row/col belongs to the
  top-left block). Empty blocks contribute nothing; one-pixel blocks use a
  variance denominator of 1.
* Mean E-measure: average of the enhanced-alignment score over 256
  thresholds placed at the centres of 256 equal bins on [0, 1]
  (tau_k = (k + 0.5) / 256), foreground where pred > tau_k. The per-threshold
  score is the mean of the enhanced matrix over all pixels.
* Weighted F-measure: beta^2 = 1, 7x7 Gaussian (sigma 5) with zero padding,
  Euclidean distance transform for pixel importance. A background pixel takes
  the error of its nearest foreground pixel; ties go to the smallest column,
  then the smallest row. Empty ground truth scores 0.
* PR / F curves: pred quantised to q = floor(255 * pred + 0.5); threshold
  t = 0..255 marks q > t as foreground. Zero denominators give 0.
  F uses beta^2 = 0.3.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

EPS = np.finfo(np.float64).eps
N_THRESHOLDS = 256
F_BETA2 = 0.3
SMALL_THRESHOLDS = {"Small8": 1 / 8, "Small16": 1 / 16, "Small32": 1 / 32}


def _check(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def normalize_prediction(pred):
    """Per-image min-max stretch; constant maps are left as they are."""
    pred = np.asarray(pred, dtype=np.float64)
    lo, hi = pred.min(), pred.max()
    if hi > lo:
        return (pred - lo) / (hi - lo)
    return pred


def mae(pred, gt):
    pred, gt = _check(pred, gt)
    return float(np.abs(pred - gt).mean())


# -- S-measure ----------------------------------------------------------------

def _object_score(values):
    if values.size == 0:
        return 0.0
    mu = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + EPS)


def _ssim(pred, gt):
    n = pred.size
    x, y = pred.mean(), gt.mean()
    denom = max(n - 1, 1)
    sx = ((pred - x) ** 2).sum() / denom
    sy = ((gt - y) ** 2).sum() / denom
    sxy = ((pred - x) * (gt - y)).sum() / denom
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def _centroid(gt):
    h, w = gt.shape
    if not gt.any():
        return int(math.floor(w / 2 + 0.5)), int(math.floor(h / 2 + 0.5))
    rows, cols = np.nonzero(gt)
    return int(math.floor(cols.mean() + 0.5)) + 1, int(math.floor(rows.mean() + 0.5)) + 1


def s_measure(pred, gt, alpha=0.5):
    pred, gt = _check(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1 - pred.mean())
    if y == 1:
        return float(pred.mean())
    g = gt.astype(np.float64)
    obj = y * _object_score(pred[gt]) + (1 - y) * _object_score(1 - pred[~gt])

    h, w = gt.shape
    cx, cy = _centroid(gt)
    region = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p, q = pred[rs, cs], g[rs, cs]
        if p.size:
            region += p.size / (h * w) * _ssim(p, q)
    return float(max(0.0, alpha * obj + (1 - alpha) * region))


# -- E-measure ----------------------------------------------------------------

def e_thresholds():
    return (np.arange(N_THRESHOLDS) + 0.5) / N_THRESHOLDS


def e_measure_curve(pred, gt):
    """Enhanced-alignment score at each of the 256 thresholds."""
    pred, gt = _check(pred, gt)
    n = gt.size
    taus = e_thresholds()
    fg = np.sort(pred[gt])
    bg = np.sort(pred[~gt])
    tp = fg.size - np.searchsorted(fg, taus, side="right")
    fp = bg.size - np.searchsorted(bg, taus, side="right")
    n_fm = (tp + fp).astype(np.float64)
    n_gt = fg.size
    if n_gt == 0:
        return (n - n_fm) / n
    if n_gt == n:
        return n_fm / n
    fn = n_gt - tp
    tn = n - n_gt - fp
    mu_f = n_fm / n
    mu_g = n_gt / n

    def enhanced(d_f, d_g):
        align = 2 * d_f * d_g / (d_f * d_f + d_g * d_g + EPS)
        return (align + 1) ** 2 / 4

    total = (tp * enhanced(1 - mu_f, 1 - mu_g) + fp * enhanced(1 - mu_f, -mu_g)
             + fn * enhanced(-mu_f, 1 - mu_g) + tn * enhanced(-mu_f, -mu_g))
    return total / n


def e_measure_mean(pred, gt):
    return float(e_measure_curve(pred, gt).mean())


# -- weighted F-measure -------------------------------------------------------

def gaussian_kernel(size=7, sigma=5.0):
    r = (size - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    return k / k.sum()


def nearest_foreground(gt):
    """Distance to, and (row, col) index of, the nearest foreground pixel."""
    return ndimage.distance_transform_edt(~gt, return_indices=True)


def weighted_f(pred, gt, beta2=1.0):
    pred, gt = _check(pred, gt)
    if not gt.any():
        return 0.0
    g = gt.astype(np.float64)
    err = np.abs(pred - g)
    dist, (ri, ci) = nearest_foreground(gt)
    et = err.copy()
    et[~gt] = err[ri[~gt], ci[~gt]]
    ea = ndimage.correlate(et, gaussian_kernel(), mode="constant", cval=0.0)
    min_e = err.copy()
    take = gt & (ea < err)
    min_e[take] = ea[take]
    importance = np.ones_like(g)
    importance[~gt] = 2 - np.exp(np.log(0.5) / 5 * dist[~gt])
    ew = min_e * importance
    tpw = g.sum() - ew[gt].sum()
    fpw = ew[~gt].sum()
    recall = 1 - ew[gt].mean()
    precision = tpw / (EPS + tpw + fpw)
    return float((1 + beta2) * recall * precision / (EPS + recall + beta2 * precision))


# -- PR and F curves ----------------------------------------------------------

def quantize(pred):
    return np.floor(np.asarray(pred, dtype=np.float64) * 255 + 0.5).astype(np.int64)


def pr_and_f_curves(pred, gt, beta2=F_BETA2):
    """Precision, recall and F at thresholds 0..255 (index = threshold)."""
    pred, gt = _check(pred, gt)
    q = quantize(pred)
    hist_fg = np.bincount(q[gt], minlength=256)[:256]
    hist_bg = np.bincount(q[~gt], minlength=256)[:256]
    # count of values strictly above t: reverse cumulative sum shifted by one
    above_fg = np.concatenate([np.cumsum(hist_fg[::-1])[::-1][1:], [0]])
    above_bg = np.concatenate([np.cumsum(hist_bg[::-1])[::-1][1:], [0]])
    tp = above_fg.astype(np.float64)
    pos = tp + above_bg
    n_gt = gt.sum()
    precision = np.divide(tp, pos, out=np.zeros(256), where=pos > 0)
    recall = tp / n_gt if n_gt > 0 else np.zeros(256)
    denom = beta2 * precision + recall
    f = np.divide((1 + beta2) * precision * recall, denom, out=np.zeros(256), where=denom > 0)
    return precision, recall, f


# -- small-target subsets ------------------------------------------------------

def foreground_fraction(gt):
    gt = np.asarray(gt).astype(bool)
    return float(gt.sum()) / gt.size


def filter_small(items, tau):
    """Indices of masks whose foreground fraction is below ``tau``.

    ``items`` may hold masks or precomputed fractions.
    """
    out = []
    for i, item in enumerate(items):
        frac = item if np.isscalar(item) else foreground_fraction(item)
        if frac < tau:
            out.append(i)
    return out


# -- accumulation --------------------------------------------------------------

@dataclass
class MetricReport:
    """Per-image scores plus dataset means and mean PR/F curves."""

    name: str = "dataset"
    normalize: bool = True
    records: list = field(default_factory=list)
    _prec: list = field(default_factory=list, repr=False)
    _rec: list = field(default_factory=list, repr=False)
    _f: list = field(default_factory=list, repr=False)

    def add(self, pred, gt, image_id=None):
        pred = normalize_prediction(pred) if self.normalize else np.asarray(pred, np.float64)
        gt = np.asarray(gt).astype(bool)
        p, r, f = pr_and_f_curves(pred, gt)
        self._prec.append(p)
        self._rec.append(r)
        self._f.append(f)
        rec = {
            "image": image_id if image_id is not None else str(len(self.records)),
            "S_m": s_measure(pred, gt),
            "F_w": weighted_f(pred, gt),
            "MAE": mae(pred, gt),
            "E_phi": e_measure_mean(pred, gt),
            "fg_fraction": foreground_fraction(gt),
        }
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)

    def mean(self, key):
        if not self.records:
            return float("nan")
        return float(math.fsum(r[key] for r in self.records) / len(self.records))

    def curves(self):
        if not self.records:
            z = np.zeros(256)
            return z, z, z
        return (np.mean(self._prec, axis=0), np.mean(self._rec, axis=0), np.mean(self._f, axis=0))

    def summary(self):
        _, _, f = self.curves()
        return {
            "dataset": self.name, "images": len(self),
            "S_m": self.mean("S_m"), "F_w": self.mean("F_w"),
            "MAE": self.mean("MAE"), "E_phi": self.mean("E_phi"),
            "meanF": float(f.mean()), "maxF": float(f.max()),
        }

    def subset(self, tau, name=None):
        """A new report restricted to images with foreground fraction < tau."""
        keep = filter_small([r["fg_fraction"] for r in self.records], tau)
        sub = MetricReport(name or f"{self.name}<{tau:g}", self.normalize)
        sub.records = [self.records[i] for i in keep]
        sub._prec = [self._prec[i] for i in keep]
        sub._rec = [self._rec[i] for i in keep]
        sub._f = [self._f[i] for i in keep]
        return sub


SUMMARY_FIELDS = ["dataset", "images", "S_m", "F_w", "MAE", "E_phi", "meanF", "maxF"]
RECORD_FIELDS = ["image", "S_m", "F_w", "MAE", "E_phi", "fg_fraction"]
CURVE_FIELDS = ["threshold", "precision", "recall", "fmeasure"]


def write_summary(path, reports, delimiter=","):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_FIELDS, delimiter=delimiter)
        w.writeheader()
        for rep in reports:
            w.writerow(_fmt(rep.summary()))


def write_records(path, report, delimiter=","):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, RECORD_FIELDS, delimiter=delimiter)
        w.writeheader()
        for rec in report.records:
            w.writerow(_fmt(rec))


def write_curves(path, report, delimiter=","):
    p, r, f = report.curves()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(CURVE_FIELDS)
        for t in range(256):
            w.writerow([t, f"{p[t]:.8f}", f"{r[t]:.8f}", f"{f[t]:.8f}"])


class CurveFileError(ValueError):
    pass


def read_curves(path):
    """Load a 256-row curve file; returns (precision, recall, fmeasure) arrays."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != CURVE_FIELDS:
        raise CurveFileError(f"{path}: header must be {','.join(CURVE_FIELDS)}")
    body = rows[1:]
    if len(body) != 256:
        raise CurveFileError(f"{path}: expected 256 data rows, found {len(body)}")
    try:
        data = np.array([[float(c) for c in row] for row in body])
    except ValueError as exc:
        raise CurveFileError(f"{path}: non-numeric value ({exc})") from None
    if data.shape[1] != 4 or not np.array_equal(data[:, 0], np.arange(256)):
        raise CurveFileError(f"{path}: thresholds must run 0..255 in order")
    return data[:, 1], data[:, 2], data[:, 3]


def _fmt(d):
    return {k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in d.items()}
