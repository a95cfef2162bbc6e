"""Synthetic image pairs with relevant (labelled) and irrelevant changes.

Both images share a smooth textured background. The previous image gets a
global illumination shift and a few brightness blobs (irrelevant changes);
the current image of a changed pair additionally shows one class-specific
shape, optionally with a soft drop shadow that is excluded from the ground
truth mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SHAPES = ("disc", "square", "triangle", "cross", "ring", "diamond")


@dataclass
class SyntheticSpec:
    num_pairs: int = 100
    image_size: int = 64
    num_change_classes: int = 3
    shapes: list[str] | None = None
    unchanged_fraction: float = 0.1
    illumination_jitter: float = 0.15
    distractor_count: int = 3
    shadow: bool = True
    seed: int = 0
    min_shape_size: int = 10
    max_shape_size: int = 18

    def validate(self) -> "SyntheticSpec":
        if self.num_change_classes < 1:
            raise ValueError("num_change_classes must be >= 1")
        if not 0.0 <= self.unchanged_fraction < 1.0:
            raise ValueError("unchanged_fraction must lie in [0, 1)")
        if self.num_pairs < 0:
            raise ValueError("num_pairs must be >= 0")
        shapes = self.class_shapes()
        unknown = [s for s in shapes if s not in SHAPES]
        if unknown:
            raise ValueError(f"unknown shapes: {unknown}")
        if self.min_shape_size > self.max_shape_size or self.max_shape_size >= self.image_size:
            raise ValueError("invalid shape size range")
        return self

    def class_shapes(self) -> list[str]:
        if self.shapes is not None:
            if len(self.shapes) != self.num_change_classes:
                raise ValueError("need one shape per change class")
            return list(self.shapes)
        if self.num_change_classes > len(SHAPES):
            raise ValueError(f"at most {len(SHAPES)} change classes without explicit shapes")
        return list(SHAPES[: self.num_change_classes])

    def label_names(self) -> dict[int, str]:
        names = {0: "unchanged"}
        names.update({i + 1: s for i, s in enumerate(self.class_shapes())})
        return names


@dataclass
class SyntheticPair:
    previous: np.ndarray  # (H, W, 3) float in [0, 1]
    current: np.ndarray
    mask: np.ndarray  # (H, W) bool
    label: int
    meta: dict = field(default_factory=dict)


def _smooth_noise(rng: np.random.Generator, size: int, scale: int) -> np.ndarray:
    coarse = rng.random((scale + 1, scale + 1))
    pos = np.linspace(0, scale, size)
    i0 = np.floor(pos).astype(int).clip(0, scale - 1)
    t = pos - i0
    t = t * t * (3 - 2 * t)
    rows = coarse[i0] * (1 - t)[:, None] + coarse[i0 + 1] * t[:, None]
    return rows[:, i0] * (1 - t)[None, :] + rows[:, i0 + 1] * t[None, :]


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.25, 0.65, size=3)
    img = np.empty((size, size, 3))
    for c in range(3):
        img[..., c] = base[c] + 0.25 * (_smooth_noise(rng, size, 4) - 0.5) + 0.1 * (_smooth_noise(rng, size, 16) - 0.5)
    img += rng.normal(0, 0.015, img.shape)
    return img


def shape_mask(kind: str, size: int, cy: float, cx: float, r: float, angle: float = 0.0) -> np.ndarray:
    """Boolean footprint of a shape centred at (cy, cx) with half-extent r."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    y, x = yy - cy, xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    u, v = ca * x + sa * y, -sa * x + ca * y
    if kind == "disc":
        return u * u + v * v <= r * r
    if kind == "square":
        return (np.abs(u) <= r * 0.85) & (np.abs(v) <= r * 0.85)
    if kind == "triangle":
        # upward triangle inscribed in radius r
        return (v <= r * 0.5) & (v >= -r + 1.732 * np.abs(u) * 0.9 - 0.0)
    if kind == "cross":
        arm = r * 0.35
        return ((np.abs(u) <= arm) & (np.abs(v) <= r)) | ((np.abs(v) <= arm) & (np.abs(u) <= r))
    if kind == "ring":
        d2 = u * u + v * v
        return (d2 <= r * r) & (d2 >= (0.5 * r) ** 2)
    if kind == "diamond":
        return np.abs(u) + np.abs(v) <= r
    raise ValueError(f"unknown shape {kind!r}")


def _blob(size: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))


def _box_blur(a: np.ndarray, k: int) -> np.ndarray:
    pad = np.pad(a, k, mode="edge")
    c = np.cumsum(np.cumsum(pad, 0), 1)
    c = np.pad(c, ((1, 0), (1, 0)))
    n = 2 * k + 1
    return (c[n:, n:] - c[:-n, n:] - c[n:, :-n] + c[:-n, :-n]) / (n * n)


def split_assignment(spec: SyntheticSpec) -> np.ndarray:
    """Label id of every pair: exactly round(n * fraction) unchanged, changed classes balanced."""
    n = spec.num_pairs
    n_unchanged = int(round(n * spec.unchanged_fraction))
    changed = np.arange(n - n_unchanged) % spec.num_change_classes + 1
    labels = np.concatenate([np.zeros(n_unchanged, dtype=int), changed])
    rng = np.random.default_rng([spec.seed, 0xC1A55])
    return labels[rng.permutation(n)]


def make_pair(spec: SyntheticSpec, index: int, label: int) -> SyntheticPair:
    """Generate pair ``index``; the result depends only on (spec, index, label)."""
    rng = np.random.default_rng([spec.seed, index])
    s = spec.image_size
    bg = _background(rng, s)
    prev = bg.copy()
    curr = bg.copy()
    prev += rng.uniform(-spec.illumination_jitter, spec.illumination_jitter)
    for _ in range(spec.distractor_count):
        cy, cx = rng.uniform(0, s, size=2)
        sigma = rng.uniform(2.0, 5.0)
        delta = rng.uniform(0.15, 0.3) * rng.choice([-1.0, 1.0])
        tint = rng.uniform(0.7, 1.0, size=3)
        prev += delta * _blob(s, cy, cx, sigma)[..., None] * tint
    mask = np.zeros((s, s), dtype=bool)
    meta: dict = {}
    if label != 0:
        kind = spec.class_shapes()[label - 1]
        r = rng.uniform(spec.min_shape_size, spec.max_shape_size) / 2
        cy, cx = rng.uniform(r + 1, s - r - 1, size=2)
        angle = rng.uniform(-0.3, 0.3)
        mask = shape_mask(kind, s, cy, cx, r, angle)
        if not mask.any():  # pragma: no cover - sizes are well above a pixel
            mask[int(cy), int(cx)] = True
        if spec.shadow:
            dy, dx = rng.integers(2, 4, size=2)
            shadow = np.roll(np.roll(mask, dy, 0), dx, 1).astype(float)
            shadow = _box_blur(shadow, 1) * ~mask
            curr *= 1 - 0.45 * shadow[..., None]
        color = rng.uniform(0.0, 1.0, size=3)
        color[rng.integers(3)] = rng.choice([0.05, 0.95])
        shading = 1 + 0.08 * (_smooth_noise(rng, s, 8) - 0.5)
        curr = np.where(mask[..., None], color * shading[..., None], curr)
        meta = {"shape": kind, "center": [float(cy), float(cx)], "radius": float(r)}
    return SyntheticPair(np.clip(prev, 0, 1), np.clip(curr, 0, 1), mask, int(label), meta)


def generate_pairs(spec: SyntheticSpec):
    """Yield every :class:`SyntheticPair` of the dataset in order."""
    spec.validate()
    for i, label in enumerate(split_assignment(spec)):
        yield make_pair(spec, i, int(label))


def generate_arrays(spec: SyntheticSpec) -> dict[str, np.ndarray]:
    """The whole dataset as arrays: previous/current (N, 3, H, W) float32 in
    [0, 1], masks (N, H, W) bool, labels (N,) int64.

    Images are quantised to 8 bits so in-memory data equals what a PNG
    round-trip produces.
    """
    prev, curr, masks, labels = [], [], [], []
    for pair in generate_pairs(spec):
        prev.append(to_uint8(pair.previous))
        curr.append(to_uint8(pair.current))
        masks.append(pair.mask)
        labels.append(pair.label)
    s = spec.image_size
    if not prev:
        return {
            "previous": np.zeros((0, 3, s, s), np.float32),
            "current": np.zeros((0, 3, s, s), np.float32),
            "masks": np.zeros((0, s, s), bool),
            "labels": np.zeros(0, np.int64),
        }
    return {
        "previous": np.stack(prev).transpose(0, 3, 1, 2).astype(np.float32) / 255.0,
        "current": np.stack(curr).transpose(0, 3, 1, 2).astype(np.float32) / 255.0,
        "masks": np.stack(masks),
        "labels": np.asarray(labels, dtype=np.int64),
    }


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
