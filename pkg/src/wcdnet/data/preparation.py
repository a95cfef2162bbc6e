"""Dataset preparation: patching, patch labels, label combination, oversampling."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Patch:
    row: int
    col: int
    top: int
    left: int
    size: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.top, self.top + self.size), slice(self.left, self.left + self.size)


def grid_offsets(length: int, patch: int, count: int) -> list[int]:
    """Uniformly spaced offsets ``round(i * (length - patch) / (count - 1))``."""
    if patch > length:
        raise ValueError(f"patch size {patch} exceeds image extent {length}")
    if count < 1:
        raise ValueError("grid count must be >= 1")
    if count == 1:
        if patch != length:
            raise ValueError(f"a single patch of {patch} px cannot cover {length} px")
        return [0]
    if count * patch < length:
        raise ValueError(f"{count} patches of {patch} px cannot cover {length} px")
    # round half up; Python's round() would round half to even
    return [int(np.floor(i * (length - patch) / (count - 1) + 0.5)) for i in range(count)]


def patch_grid(height: int, width: int, patch: int, grid: tuple[int, int]) -> list[Patch]:
    rows, cols = grid
    tops = grid_offsets(height, patch, rows)
    lefts = grid_offsets(width, patch, cols)
    return [Patch(r, c, t, l, patch) for r, t in enumerate(tops) for c, l in enumerate(lefts)]


def patch_pair(previous: np.ndarray, current: np.ndarray, patch: int, grid: tuple[int, int], mask: np.ndarray | None = None):
    """Cut both images (H, W, ...) into a grid of square patches.

    Returns a list of ``(prev_patch, curr_patch, mask_patch_or_None, Patch)``.
    """
    if previous.shape[:2] != current.shape[:2]:
        raise ValueError("previous and current image sizes differ")
    h, w = previous.shape[:2]
    out = []
    for p in patch_grid(h, w, patch, grid):
        ys, xs = p.slices
        out.append((previous[ys, xs], current[ys, xs], None if mask is None else mask[ys, xs], p))
    return out


def patch_label(mask_patch: np.ndarray, label: int, unchanged_label_id: int = 0, min_pixels: int = 16) -> int:
    """Object label if the patch holds at least ``min_pixels`` changed pixels, else unchanged."""
    return label if int(np.count_nonzero(mask_patch)) >= min_pixels else unchanged_label_id


def combine_labels(present_classes: Iterable[int], num_base_classes: int | None = None) -> int:
    """Bitmask id of a set of base classes; the empty set is 0 (unchanged)."""
    ids = set(int(c) for c in present_classes)
    if any(c < 0 for c in ids):
        raise ValueError("class indices must be non-negative")
    if num_base_classes is not None and any(c >= num_base_classes for c in ids):
        raise ValueError(f"class index out of range for {num_base_classes} base classes")
    return sum(1 << c for c in ids)


def split_label(label_id: int) -> list[int]:
    """Inverse of :func:`combine_labels`."""
    if label_id < 0:
        raise ValueError("label id must be non-negative")
    return [i for i in range(label_id.bit_length()) if label_id >> i & 1]


def combined_label_names(base_names: list[str], unchanged: str = "unchanged") -> dict[int, str]:
    names = {0: unchanged}
    for combo in range(1, 2 ** len(base_names)):
        names[combo] = "+".join(base_names[i] for i in split_label(combo))
    return names


def oversample_indices(labels, min_count: int) -> np.ndarray:
    """Indices after round-robin duplication so every label appears >= ``min_count`` times.

    Original entries keep their order and come first; copies are appended
    grouped by label in ascending label order, cycling through that label's
    entries in their original order.
    """
    labels = np.asarray(labels)
    base = np.arange(len(labels))
    extra = []
    for label in np.unique(labels):
        idx = base[labels == label]
        need = max(0, min_count - len(idx))
        extra.extend(idx[np.arange(need) % len(idx)].tolist())
    return np.concatenate([base, np.asarray(extra, dtype=int)]).astype(int)
