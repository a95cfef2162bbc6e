"""On-disk dataset format.

A dataset directory holds::

    manifest.csv   pair_id,prev_path,curr_path,label_id,mask_path (paths relative to the directory)
    labels.json    {"label_names": {"0": "unchanged", ...}, "unchanged_label_id": 0}
    prev/ curr/    8-bit RGB PNGs
    masks/         8-bit single-channel PNGs with values {0, 255} (optional per pair)
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import PairDataset
from .preparation import oversample_indices

MANIFEST_FIELDS = ["pair_id", "prev_path", "curr_path", "label_id", "mask_path"]


class DatasetError(ValueError):
    """Malformed or inconsistent dataset on disk."""


@dataclass
class ManifestEntry:
    pair_id: str
    prev_path: str
    curr_path: str
    label_id: int
    mask_path: str | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    label_names: dict[int, str]
    unchanged_label_id: int = 0
    root: Path | None = field(default=None, compare=False)

    def validate(self) -> "DatasetManifest":
        if self.unchanged_label_id not in self.label_names:
            raise DatasetError(f"unchanged label id {self.unchanged_label_id} has no name")
        for e in self.entries:
            if e.label_id not in self.label_names:
                raise DatasetError(f"pair {e.pair_id}: unknown label id {e.label_id}")
        ids = [e.pair_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate pair ids in manifest")
        return self

    def labels(self) -> np.ndarray:
        return np.array([e.label_id for e in self.entries], dtype=np.int64)


def oversample(manifest: DatasetManifest, min_count: int) -> DatasetManifest:
    """Duplicate entries until every label id has at least ``min_count`` of them.

    Copies get a ``#k`` suffix on the pair id so ids stay unique.
    """
    idx = oversample_indices(manifest.labels(), min_count)
    seen: dict[int, int] = {}
    entries = []
    for i in idx:
        e = manifest.entries[i]
        k = seen.get(i, 0)
        seen[i] = k + 1
        pid = e.pair_id if k == 0 else f"{e.pair_id}#{k}"
        entries.append(ManifestEntry(pid, e.prev_path, e.curr_path, e.label_id, e.mask_path))
    return DatasetManifest(entries, dict(manifest.label_names), manifest.unchanged_label_id, manifest.root)


def read_rgb(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"image not found: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_mask(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"mask not found: {path}")
    with Image.open(path) as im:
        if im.mode not in ("L", "1", "P"):
            raise DatasetError(f"{path}: mask must be single-channel, got mode {im.mode}")
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    bad = ~np.isin(arr, (0, 255))
    if bad.any():
        raise DatasetError(f"{path}: mask is not binary (found value {int(arr[bad][0])}; expected 0 or 255)")
    return arr == 255


def write_rgb_png(path: str | os.PathLike, img: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path)


def write_gray_png(path: str | os.PathLike, img: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(path)


def to_chw_float(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 or float image to (3, H, W) float32 in [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)


def save_manifest(manifest: DatasetManifest, root: str | os.PathLike) -> Path:
    """Write ``manifest.csv`` and ``labels.json`` into ``root``."""
    manifest.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for e in manifest.entries:
            writer.writerow([e.pair_id, e.prev_path, e.curr_path, e.label_id, e.mask_path or ""])
    labels = {
        "label_names": {str(k): v for k, v in sorted(manifest.label_names.items())},
        "unchanged_label_id": manifest.unchanged_label_id,
    }
    (root / "labels.json").write_text(json.dumps(labels, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return root


def load_manifest(root: str | os.PathLike, check_files: bool = True) -> DatasetManifest:
    root = Path(root)
    csv_path = root / "manifest.csv"
    labels_path = root / "labels.json"
    for p in (csv_path, labels_path):
        if not p.is_file():
            raise DatasetError(f"missing dataset file: {p}")
    try:
        labels = json.loads(labels_path.read_text(encoding="utf-8"))
        names = {int(k): str(v) for k, v in labels["label_names"].items()}
        unchanged = int(labels["unchanged_label_id"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"{labels_path}: malformed label file ({exc})") from exc
    entries = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise DatasetError(f"{csv_path}: header must be {','.join(MANIFEST_FIELDS)}")
        for line, row in enumerate(reader, start=2):
            try:
                label = int(row["label_id"])
            except ValueError as exc:
                raise DatasetError(f"{csv_path}:{line}: bad label_id {row['label_id']!r}") from exc
            entries.append(
                ManifestEntry(row["pair_id"], row["prev_path"], row["curr_path"], label, row["mask_path"] or None)
            )
    manifest = DatasetManifest(entries, names, unchanged, root).validate()
    if check_files:
        for e in entries:
            for rel in (e.prev_path, e.curr_path, e.mask_path):
                if rel and not (root / rel).is_file():
                    raise DatasetError(f"pair {e.pair_id}: file not found: {root / rel}")
    return manifest


def load_dataset(root: str | os.PathLike, manifest: DatasetManifest | None = None) -> PairDataset:
    """Read every image of a dataset directory into memory."""
    root = Path(root)
    manifest = manifest or load_manifest(root)
    prev, curr, masks, has_mask = [], [], [], []
    size = None
    for e in manifest.entries:
        p = read_rgb(root / e.prev_path)
        c = read_rgb(root / e.curr_path)
        if p.shape != c.shape:
            raise DatasetError(f"pair {e.pair_id}: image sizes differ")
        if size is None:
            size = p.shape[:2]
        elif p.shape[:2] != size:
            raise DatasetError(f"pair {e.pair_id}: all pairs must share one image size")
        prev.append(to_chw_float(p))
        curr.append(to_chw_float(c))
        if e.mask_path:
            m = read_mask(root / e.mask_path)
            if m.shape != size:
                raise DatasetError(f"pair {e.pair_id}: mask size differs from image size")
            masks.append(m)
            has_mask.append(True)
        else:
            masks.append(np.zeros(size, dtype=bool))
            has_mask.append(False)
    if not manifest.entries:
        raise DatasetError(f"{root}: dataset has no entries")
    return PairDataset(
        np.stack(prev),
        np.stack(curr),
        manifest.labels(),
        np.stack(masks) if any(has_mask) else None,
        np.asarray(has_mask) if any(has_mask) else None,
        dict(manifest.label_names),
        manifest.unchanged_label_id,
        [e.pair_id for e in manifest.entries],
    )


def write_dataset_dir(root: str | os.PathLike, pairs, label_names: dict[int, str], unchanged_label_id: int = 0) -> DatasetManifest:
    """Write pairs ``(pair_id, prev_uint8, curr_uint8, label, mask_bool_or_None)`` as a dataset directory."""
    root = Path(root)
    entries = []
    for pid, prev, curr, label, mask in pairs:
        prev_rel, curr_rel = f"prev/{pid}.png", f"curr/{pid}.png"
        write_rgb_png(root / prev_rel, prev)
        write_rgb_png(root / curr_rel, curr)
        mask_rel = None
        if mask is not None:
            mask_rel = f"masks/{pid}.png"
            write_gray_png(root / mask_rel, np.asarray(mask, dtype=np.uint8) * 255)
        entries.append(ManifestEntry(pid, prev_rel, curr_rel, int(label), mask_rel))
    manifest = DatasetManifest(entries, dict(label_names), unchanged_label_id, root)
    save_manifest(manifest, root)
    return manifest


def write_synthetic(spec, root: str | os.PathLike) -> DatasetManifest:
    """Generate a synthetic dataset and store it in the directory format."""
    from .synthetic import generate_pairs, to_uint8

    spec.validate()

    def pairs():
        for i, pair in enumerate(generate_pairs(spec)):
            yield f"{i:05d}", to_uint8(pair.previous), to_uint8(pair.current), pair.label, pair.mask

    return write_dataset_dir(root, pairs(), spec.label_names(), 0)
