"""Figures and delimited metrics written next to a job's output."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pipeline import Palette  # noqa: E402


def _show(ax, img, title):
    img = np.clip(np.asarray(img, dtype=np.float64), 0, 255) / 255.0
    if img.ndim == 3 and img.shape[2] == 1:
        ax.imshow(img[:, :, 0], cmap="gray", vmin=0, vmax=1, interpolation="nearest")
    else:
        ax.imshow(img, interpolation="nearest")
    ax.set_title(title, fontsize=8)
    ax.set_axis_off()


def plot_progression(frames: dict[int, np.ndarray], path, max_panels: int = 10, title=None):
    """Grid of decoded clean estimates, earliest denoising step first."""
    steps = sorted(frames, reverse=True)
    if len(steps) > max_panels:
        pick = np.linspace(0, len(steps) - 1, max_panels).round().astype(int)
        steps = [steps[i] for i in pick]
    fig, axes = plt.subplots(1, len(steps), figsize=(1.4 * len(steps), 1.8), squeeze=False)
    for ax, t in zip(axes[0], steps):
        _show(ax, frames[t], f"t={t}")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_palettes(palettes: dict[str, Palette], path):
    """One horizontal stacked bar per palette, segment width = proportion."""
    fig, ax = plt.subplots(figsize=(5, 0.5 + 0.45 * len(palettes)))
    for row, (name, pal) in enumerate(palettes.items()):
        left = 0.0
        for color, p in zip(pal.colors, pal.proportions):
            ax.barh(row, p, left=left, color=np.clip(color, 0, 255) / 255.0, edgecolor="k", lw=0.3)
            left += p
    ax.set_yticks(range(len(palettes)))
    ax.set_yticklabels(list(palettes))
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("proportion")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_panels(images: dict[str, np.ndarray], path):
    fig, axes = plt.subplots(1, len(images), figsize=(2.0 * len(images), 2.2), squeeze=False)
    for ax, (name, img) in zip(axes[0], images.items()):
        _show(ax, img, name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_metrics(rows: list[tuple[str, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name, value in rows:
            w.writerow([name, f"{value:.6g}"])


def write_report(outdir, images: dict[str, np.ndarray], palettes: dict[str, Palette],
                 metrics: list[tuple[str, float]],
                 frames: dict[str, dict[int, np.ndarray]] | None = None):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_metrics(metrics, outdir / "metrics.csv")
    plot_panels(images, outdir / "panels.png")
    if palettes:
        plot_palettes(palettes, outdir / "palettes.png")
    for branch, per_step in (frames or {}).items():
        plot_progression(per_step, outdir / f"progression_{branch}.png", title=f"{branch} branch")
