"""Matplotlib figures written next to the CLI's text reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_occupancy(table, path, crossover=None, title: str = "2D/3D occupancy") -> None:
    widths = [r.width for r in table]
    fill = [100 * r.grid_fill for r in table]
    keep = [100 * r.point_retention for r in table]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(widths, fill, "o-", label="grid fill (2D)")
    ax.plot(widths, keep, "s-", label="point retention (3D)")
    if crossover is not None:
        ax.axvspan(crossover[0], crossover[1], color="0.85", zorder=0, label="crossover")
    ax.set_xlabel("raster width W")
    ax.set_ylabel("percent")
    ax.set_title(title)
    ax.set_ylim(0, 100)
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    _finish(fig, path)


def plot_error_maps(bev: np.ndarray, range_map: np.ndarray, path, title: str = "") -> None:
    h, w, _ = range_map.shape
    fig = plt.figure(figsize=(8, 8 + 8 * h / max(w, 1)))
    top = fig.add_axes([0.05, 0.3, 0.9, 0.65])
    top.imshow(bev, interpolation="nearest")
    top.set_axis_off()
    if title:
        top.set_title(title)
    bottom = fig.add_axes([0.02, 0.05, 0.96, 0.2])
    bottom.imshow(range_map, interpolation="nearest", aspect="auto")
    bottom.set_axis_off()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_class_scores(names, values, path, ylabel: str = "IoU") -> None:
    values = np.asarray(values, dtype=float)
    keep = ~np.isnan(values)
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * keep.sum()), 3.6))
    ax.bar(np.arange(keep.sum()), 100 * values[keep], color="0.45")
    ax.set_xticks(np.arange(keep.sum()))
    ax.set_xticklabels([n for n, k in zip(names, keep) if k], rotation=60, ha="right", fontsize=8)
    ax.set_ylabel(f"{ylabel} (%)")
    ax.set_ylim(0, 100)
    _finish(fig, path)
