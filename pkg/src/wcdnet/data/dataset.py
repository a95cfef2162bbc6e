"""In-memory pair datasets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass
class PairDataset:
    """Image pairs as channel-first float32 arrays in [0, 1].

    ``masks`` may be ``None`` (no ground truth at all); ``has_mask`` marks
    which pairs carry a usable ground-truth mask.
    """

    previous: np.ndarray  # (N, 3, H, W)
    current: np.ndarray  # (N, 3, H, W)
    labels: np.ndarray  # (N,)
    masks: np.ndarray | None = None  # (N, H, W) bool
    has_mask: np.ndarray | None = None  # (N,) bool
    label_names: dict[int, str] = field(default_factory=dict)
    unchanged_label_id: int = 0
    pair_ids: list[str] | None = None

    def __post_init__(self):
        n = len(self.labels)
        if self.previous.shape != self.current.shape or len(self.previous) != n:
            raise ValueError("previous/current/labels sizes disagree")
        if self.masks is not None and self.has_mask is None:
            self.has_mask = np.ones(n, dtype=bool)
        if self.masks is None:
            self.has_mask = np.zeros(n, dtype=bool)
        if self.pair_ids is None:
            self.pair_ids = [f"{i:05d}" for i in range(n)]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_size(self) -> tuple[int, int]:
        return tuple(self.previous.shape[-2:])

    @property
    def num_classes(self) -> int:
        if self.label_names:
            return max(self.label_names) + 1
        return int(self.labels.max()) + 1

    def subset(self, index) -> "PairDataset":
        index = np.asarray(index)
        return PairDataset(
            self.previous[index],
            self.current[index],
            self.labels[index],
            None if self.masks is None else self.masks[index],
            None if self.has_mask is None else self.has_mask[index],
            dict(self.label_names),
            self.unchanged_label_id,
            [self.pair_ids[i] for i in np.arange(len(self))[index]],
        )

    def changed_only(self) -> "PairDataset":
        return self.subset(np.nonzero(self.labels != self.unchanged_label_id)[0])

    def has_unchanged(self) -> bool:
        return bool(np.any(self.labels == self.unchanged_label_id))

    def batch(self, index, dtype=torch.float32):
        prev = torch.from_numpy(self.previous[index]).to(dtype)
        curr = torch.from_numpy(self.current[index]).to(dtype)
        labels = torch.from_numpy(np.asarray(self.labels[index], dtype=np.int64))
        masks = None
        if self.masks is not None:
            masks = torch.from_numpy(self.masks[index].astype(np.float32)).to(dtype)
        return prev, curr, labels, masks

    @classmethod
    def from_arrays(cls, arrays: dict, label_names: dict[int, str], unchanged_label_id: int = 0) -> "PairDataset":
        return cls(
            arrays["previous"],
            arrays["current"],
            arrays["labels"],
            arrays.get("masks"),
            None,
            dict(label_names),
            unchanged_label_id,
        )


def synthetic_dataset(spec) -> PairDataset:
    from .synthetic import generate_arrays

    spec.validate()
    return PairDataset.from_arrays(generate_arrays(spec), spec.label_names(), 0)
