"""Synthetic pairs, dataset preparation and the on-disk dataset format."""

from .dataset import PairDataset, synthetic_dataset
from .manifest import DatasetError, DatasetManifest, ManifestEntry, load_dataset, load_manifest, save_manifest
from .synthetic import SyntheticSpec

__all__ = [
    "DatasetError",
    "DatasetManifest",
    "ManifestEntry",
    "PairDataset",
    "SyntheticSpec",
    "load_dataset",
    "load_manifest",
    "save_manifest",
    "synthetic_dataset",
]
