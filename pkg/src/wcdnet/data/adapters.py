"""Convert user-supplied AICD- and HRSCD-style directory trees into the dataset format.

No data is downloaded; both adapters only read what the user points them at.

AICD-style tree (names configurable)::

    <root>/<image_dir>/<stem>_target.png   previous image
    <root>/<image_dir>/<stem>_moving.png   current image
    <root>/<mask_dir>/<stem>_gtmask.png    change mask (non-zero = change)
    <labels csv>                           stem,label   (image-level object labels)

HRSCD-style tree (identical file names in every directory)::

    <root>/<prev_dir>/<name>       previous image
    <root>/<curr_dir>/<name>       current image
    <root>/<change_dir>/<name>     binary change map
    <root>/<landcover_dir>/<name>  current land cover, classes 1..K (0 = no data)
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import DatasetError, DatasetManifest, oversample, save_manifest, write_dataset_dir
from .preparation import combine_labels, combined_label_names, patch_label, patch_pair

Image.MAX_IMAGE_PIXELS = None  # HRSCD tiles are 10k x 10k

HRSCD_CLASSES = ["artificial", "agricultural", "forest", "wetland", "water"]


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[0] == size and img.shape[1] == size:
        return img
    return np.asarray(Image.fromarray(img).resize((size, size), Image.BILINEAR))


def resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    if mask.shape[0] == size and mask.shape[1] == size:
        return mask
    im = Image.fromarray(mask.astype(np.uint8) * 255)
    return np.asarray(im.resize((size, size), Image.NEAREST)) > 127


def _read(path: Path, mode: str) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"file not found: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert(mode) if mode else im)


def read_label_csv(path: str | os.PathLike) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"label file not found: {path}")
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "stem":
                continue
            if len(row) < 2:
                raise DatasetError(f"{path}: expected 'stem,label' rows")
            out[row[0].strip()] = row[1].strip()
    return out


def adapt_aicd(
    root: str | os.PathLike,
    labels_csv: str | os.PathLike,
    out: str | os.PathLike,
    image_dir: str = "Images_Shadows",
    mask_dir: str = "GroundTruth",
    prev_suffix: str = "_target",
    curr_suffix: str = "_moving",
    mask_suffix: str = "_gtmask",
    patch: int = 122,
    grid: tuple[int, int] = (6, 8),
    resize: int = 128,
    min_pixels: int = 16,
    unchanged_name: str = "unchanged",
) -> DatasetManifest:
    """Cut every AICD pair into grid patches and label each patch."""
    root = Path(root)
    labels = read_label_csv(labels_csv)
    names = sorted(set(labels.values()) - {unchanged_name})
    label_names = {0: unchanged_name, **{i + 1: n for i, n in enumerate(names)}}
    label_ids = {n: i for i, n in label_names.items()}
    img_dir = root / image_dir
    if not img_dir.is_dir():
        raise DatasetError(f"image directory not found: {img_dir}")
    stems = sorted(p.name[: -len(curr_suffix + p.suffix)] for p in img_dir.glob(f"*{curr_suffix}.png"))
    if not stems:
        raise DatasetError(f"no '*{curr_suffix}.png' images in {img_dir}")

    def pairs():
        for stem in stems:
            if stem not in labels:
                raise DatasetError(f"no image-level label for {stem} in {labels_csv}")
            prev = _read(img_dir / f"{stem}{prev_suffix}.png", "RGB")
            curr = _read(img_dir / f"{stem}{curr_suffix}.png", "RGB")
            mask = _read(root / mask_dir / f"{stem}{mask_suffix}.png", "L") > 127
            object_label = label_ids[labels[stem]]
            for p_prev, p_curr, p_mask, p in patch_pair(prev, curr, patch, grid, mask):
                label = patch_label(p_mask, object_label, 0, min_pixels)
                yield (
                    f"{stem}_r{p.row}c{p.col}",
                    resize_image(p_prev, resize),
                    resize_image(p_curr, resize),
                    label,
                    resize_mask(p_mask, resize),
                )

    return write_dataset_dir(out, pairs(), label_names, 0)


def adapt_hrscd(
    root: str | os.PathLike,
    out: str | os.PathLike,
    prev_dir: str = "images_2006",
    curr_dir: str = "images_2012",
    change_dir: str = "labels_change",
    landcover_dir: str = "labels_land_cover_2012",
    crop: int = 1000,
    resize: int = 512,
    min_pixels: int = 16,
    oversample_min: int = 0,
    class_names: list[str] | None = None,
) -> DatasetManifest:
    """Tile HRSCD pairs without overlap and derive combined image-level labels.

    The label of a tile is the bitmask combination of the land-cover classes
    found under its changed pixels; tiles with fewer than ``min_pixels``
    changed pixels are unchanged.
    """
    root = Path(root)
    class_names = class_names or HRSCD_CLASSES
    k = len(class_names)
    label_names = combined_label_names(class_names)
    files = sorted(p.name for p in (root / curr_dir).glob("*") if p.is_file())
    if not files:
        raise DatasetError(f"no images in {root / curr_dir}")

    def pairs():
        for name in files:
            stem = Path(name).stem
            prev = _read(root / prev_dir / name, "RGB")
            curr = _read(root / curr_dir / name, "RGB")
            change = _read(root / change_dir / name, "") > 0
            cover = _read(root / landcover_dir / name, "")
            if change.ndim != 2 or cover.ndim != 2:
                raise DatasetError(f"{name}: change and land-cover maps must be single-channel")
            h, w = curr.shape[:2]
            for r in range(h // crop):
                for c in range(w // crop):
                    ys, xs = slice(r * crop, (r + 1) * crop), slice(c * crop, (c + 1) * crop)
                    tile_change = change[ys, xs]
                    if np.count_nonzero(tile_change) >= min_pixels:
                        present = np.unique(cover[ys, xs][tile_change])
                        present = [int(v) - 1 for v in present if 1 <= v <= k]
                        label = combine_labels(present, k)
                    else:
                        label = 0
                    yield (
                        f"{stem}_r{r}c{c}",
                        resize_image(prev[ys, xs], resize),
                        resize_image(curr[ys, xs], resize),
                        label,
                        resize_mask(tile_change, resize),
                    )

    manifest = write_dataset_dir(out, pairs(), label_names, 0)
    if oversample_min > 0:
        manifest = oversample(manifest, oversample_min)
        save_manifest(manifest, out)
    return manifest
