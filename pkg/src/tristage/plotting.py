"""PR / F-measure curve figures and feature-map montages."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import read_curves  # noqa: E402

DPI = 120


def plot_curves(curve_files, out_dir, prefix=""):
    """One PR figure and one F-vs-threshold figure, every curve overlaid.

    ``curve_files`` is a list of ``(label, path)``; returns the two image paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = [(label, *read_curves(path)) for label, path in curve_files]

    fig, ax = plt.subplots(figsize=(5, 4.5))
    for label, p, r, _ in loaded:
        # thresholds 0..255; points with no positive prediction have precision 0
        ok = (p > 0) | (r > 0)
        ax.plot(r[ok], p[ok], lw=1.5, label=label)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, loc="lower left")
    fig.tight_layout()
    pr_path = out_dir / f"{prefix}pr_curves.png"
    fig.savefig(pr_path, dpi=DPI)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4.5))
    t = np.arange(256)
    for label, _, _, f in loaded:
        ax.plot(t, f, lw=1.5, label=label)
    ax.set_xlabel("Threshold")
    ax.set_ylabel("F-measure")
    ax.set_xlim(0, 255)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, loc="lower left")
    fig.tight_layout()
    f_path = out_dir / f"{prefix}f_curves.png"
    fig.savefig(f_path, dpi=DPI)
    plt.close(fig)
    return pr_path, f_path


def load_feature_dump(path):
    with np.load(path) as z:
        return {k: z[k] for k in z.files}


def feature_montage(features, out_path, channels=6, title=None):
    """Grid with one row per feature map and its first ``channels`` channels
    (each min-max scaled on its own) as columns."""
    names = sorted(features)
    if not names:
        raise ValueError("no feature maps to draw")
    rows = []
    for k in names:
        a = np.asarray(features[k], dtype=np.float64)
        while a.ndim > 3:
            a = a[0]
        if a.ndim == 2:
            a = a[None]
        rows.append((k, a[:channels]))
    ncol = max(a.shape[0] for _, a in rows)
    fig, axes = plt.subplots(len(rows), ncol, figsize=(1.6 * ncol, 1.7 * len(rows)), squeeze=False)
    for r, (k, a) in enumerate(rows):
        for c in range(ncol):
            ax = axes[r, c]
            ax.set_xticks([])
            ax.set_yticks([])
            if c < a.shape[0]:
                m = a[c]
                span = m.max() - m.min()
                ax.imshow((m - m.min()) / span if span > 0 else np.zeros_like(m), cmap="viridis")
            else:
                ax.axis("off")
        axes[r, 0].set_ylabel(k, fontsize=7)
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)
    return out_path
