"""Figures written next to the delimited outputs: sample grids, loss curves, ablation bars."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

GRID_COLUMNS = ("masked input", "predicted edges", "composed output", "ground truth")
STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 110,
}


def to_uint8(arr):
    return np.round(np.clip(arr, 0.0, 1.0) * 255).astype(np.uint8)


def save_png(arr, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(arr)).save(path, format="PNG")
    return path


def hstack(panels, gap=2):
    """Concatenate equally tall H x W x 3 panels with a white separator."""
    h = panels[0].shape[0]
    sep = np.ones((h, gap, 3), dtype=np.float32)
    parts = []
    for i, p in enumerate(panels):
        if p.ndim == 2:
            p = np.repeat(p[..., None], 3, axis=2)
        if i:
            parts.append(sep)
        parts.append(p.astype(np.float32))
    return np.concatenate(parts, axis=1)


def save_sample_grid(rows, path, gap=2):
    """Rows of [masked input, predicted edges, composed output, ground truth]."""
    lines = [hstack(r, gap) for r in rows]
    sep = np.ones((gap, lines[0].shape[1], 3), dtype=np.float32)
    stacked = [lines[0]]
    for line in lines[1:]:
        stacked += [sep, line]
    return save_png(np.concatenate(stacked, axis=0), path)


def save_strip(masked, output, original, path):
    return save_png(hstack([masked, output, original]), path)


def _smooth(y, k):
    if len(y) < k or k < 2:
        return np.asarray(y)
    return np.convolve(y, np.ones(k) / k, mode="valid")


def plot_loss_curves(report, path, window=10):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    terms = [k for k in report.curves if k != "total"]
    with plt.rc_context(STYLE):
        fig, (ax_t, ax_p) = plt.subplots(1, 2, figsize=(9, 3.2))
        total = np.asarray(report.curves["total"])
        x = np.arange(1, len(total) + 1)
        ax_t.plot(x, total, color="0.75", lw=0.8, label="per iteration")
        sm = _smooth(total, window)
        ax_t.plot(x[len(x) - len(sm):], sm, color="C0", lw=1.5, label=f"{window}-iter mean")
        ax_t.set_title(f"{report.stage} stage: generator total")
        ax_t.set_xlabel("iteration")
        ax_t.legend(frameon=False)
        for i, k in enumerate(terms):
            y = _smooth(report.curves[k], window)
            ax_p.plot(np.arange(len(y)) + 1, y, lw=1.2, color=f"C{i}", label=k)
        ax_p.set_title("terms (unweighted)")
        ax_p.set_xlabel("iteration")
        ax_p.set_yscale("symlog", linthresh=1e-3)
        ax_p.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_ablation(rows, path):
    """Grouped bars per metric for the rows of an ablation table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics = ("PSNR", "SSIM", "MAE")
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(8, 2.8))
        for ax, m in zip(axes, metrics):
            vals = [r[m] for r in rows]
            bars = ax.bar(range(len(rows)), vals, color=[f"C{i}" for i in range(len(rows))])
            for b, r in zip(bars, rows):
                if m in r["best"]:
                    b.set_edgecolor("black")
                    b.set_linewidth(1.5)
            ax.set_xticks(range(len(rows)))
            ax.set_xticklabels([r["model"] for r in rows], rotation=15, ha="right", fontsize=7)
            ax.set_title(m + (" (lower is better)" if m == "MAE" else ""))
            lo, hi = min(vals), max(vals)
            pad = (hi - lo) * 0.5 or abs(hi) * 0.05 or 0.05
            ax.set_ylim(lo - pad if m != "MAE" else 0, hi + pad)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
