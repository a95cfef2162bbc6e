"""Static report artifacts: metric tables, qualitative panels, training curves."""

from __future__ import annotations

import csv
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data.dataset import PairDataset  # noqa: E402

PANEL_ROWS = ("Previous image", "Current image", "Predicted change mask", "Ground truth change mask")


def save_panels(
    dataset: PairDataset,
    pred_masks: np.ndarray,
    path: str | os.PathLike,
    indices=None,
    probabilities: np.ndarray | None = None,
) -> Path:
    """One column per pair; rows are previous, current, predicted and ground-truth masks."""
    if indices is None:
        indices = range(min(8, len(dataset)))
    indices = list(indices)
    n = max(1, len(indices))
    fig, axes = plt.subplots(4, n, figsize=(1.6 * n + 1.2, 6.8), squeeze=False)
    for col, i in enumerate(indices):
        gt = dataset.masks[i] if dataset.masks is not None and dataset.has_mask[i] else None
        images = [
            dataset.previous[i].transpose(1, 2, 0),
            dataset.current[i].transpose(1, 2, 0),
            pred_masks[i],
            gt,
        ]
        for row, img in enumerate(images):
            ax = axes[row, col]
            ax.set_xticks([])
            ax.set_yticks([])
            if img is None:
                ax.text(0.5, 0.5, "n/a", ha="center", va="center", transform=ax.transAxes)
            elif img.ndim == 2:
                ax.imshow(img, cmap="gray", vmin=0, vmax=1)
            else:
                ax.imshow(np.clip(img, 0, 1))
            if col == 0:
                ax.set_ylabel(PANEL_ROWS[row], fontsize=7)
        names = dataset.label_names
        title = names.get(int(dataset.labels[i]), str(dataset.labels[i]))
        if probabilities is not None:
            p = int(np.argmax(probabilities[i]))
            title += f"\npred: {names.get(p, str(p))}"
        axes[0, col].set_title(title, fontsize=7)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_training_log(log_paths: list[str | os.PathLike], path: str | os.PathLike) -> Path | None:
    """Loss and validation curves from one or more training CSV logs."""
    series = []
    for p in log_paths:
        p = Path(p)
        if p.is_file():
            with open(p, newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
            if rows:
                series.append((p.stem, rows))
    if not series:
        return None
    fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(9, 3.2))
    for name, rows in series:
        epochs = [int(r["epoch"]) for r in rows]
        ax_loss.plot(epochs, [float(r["loss"]) for r in rows], label=name)
        for key in ("val_top1", "val_change_iou"):
            vals = [float(r[key]) if r[key] else np.nan for r in rows]
            ax_val.plot(epochs, vals, label=f"{name} {key}")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_val.set_xlabel("epoch")
    ax_val.set_ylim(0, 1)
    ax_loss.legend(fontsize=7)
    ax_val.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
