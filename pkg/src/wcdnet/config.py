"""Configuration objects for models, CRF refinement and training.

Experiment config files are YAML with three optional top-level sections,
``model``, ``crf`` and ``train``, whose keys mirror the dataclass fields
below. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

SEED_ENV = "WCDNET_SEED"
OUT_ENV = "WCDNET_OUT"


class ConfigError(ValueError):
    """Raised for invalid configuration values."""


@dataclass
class CrfParams:
    spatial_sigma: float = 1.0
    bilateral_sigma_space: float = 3.0
    bilateral_sigma_color: float = 0.1
    spatial_weight: float = 1.0
    bilateral_weight: float = 2.0
    # Potts by default: penalise disagreeing labels only
    compatibility: list[list[float]] = field(default_factory=lambda: [[0.0, 1.0], [1.0, 0.0]])
    iterations: int = 5
    kernel_truncation_radius: int = 6

    def validate(self) -> "CrfParams":
        for name in ("spatial_sigma", "bilateral_sigma_space", "bilateral_sigma_color"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.kernel_truncation_radius < 1:
            raise ConfigError("kernel_truncation_radius must be >= 1")
        compat = self.compatibility
        if len(compat) != 2 or any(len(row) != 2 for row in compat):
            raise ConfigError("compatibility must be a 2x2 matrix")
        recommended = math.ceil(2 * max(self.spatial_sigma, self.bilateral_sigma_space))
        if self.kernel_truncation_radius < recommended:
            warnings.warn(
                f"kernel_truncation_radius={self.kernel_truncation_radius} is below the "
                f"recommended {recommended} (2 * largest spatial sigma)",
                stacklevel=2,
            )
        return self


@dataclass
class ModelConfig:
    """Architecture hyper-parameters of a change detection network.

    ``encoder_width`` scales the VGG16 channel widths (64, 128, 256, 512,
    512); 1.0 is the full-size network, the toy configs use 1/8.
    """

    input_size: tuple[int, int] = (64, 64)
    num_classes: int = 4
    alpha: float = 32.0
    filter_schedule: list[int] = field(default_factory=lambda: [256, 128, 64, 32, 16, 16])
    residual_block_enabled: bool = True
    crf_enabled: bool = False
    crf_iterations: int = 5
    supervision_mode: str = "weak"
    mask_threshold: float = 0.5
    encoder_width: float = 1.0
    head_width: int = 16
    residual_width: int = 16
    fusion_hidden: int = 256
    unchanged_label_id: int = 0

    def validate(self) -> "ModelConfig":
        self.input_size = tuple(int(v) for v in self.input_size)
        if len(self.input_size) != 2:
            raise ConfigError("input_size must be (height, width)")
        h, w = self.input_size
        if h % 32 or w % 32:
            raise ConfigError("input_size must be divisible by 32 (five pooling stages)")
        if len(self.filter_schedule) != 6:
            raise ConfigError(
                f"filter_schedule must have exactly 6 entries, got {len(self.filter_schedule)}"
            )
        if any(int(f) < 1 for f in self.filter_schedule):
            raise ConfigError("filter_schedule entries must be positive")
        if self.num_classes < 2 and self.residual_block_enabled:
            raise ConfigError("num_classes must be >= 2 when the residual block is enabled")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if not self.alpha > 0:
            raise ConfigError("alpha must be > 0")
        if self.supervision_mode not in ("weak", "full_multitask"):
            raise ConfigError(f"unknown supervision_mode {self.supervision_mode!r}")
        if not 0.0 < self.mask_threshold < 1.0:
            raise ConfigError("mask_threshold must lie in (0, 1)")
        if self.crf_iterations < 1:
            raise ConfigError("crf_iterations must be >= 1")
        if not 0 <= self.unchanged_label_id < self.num_classes:
            raise ConfigError("unchanged_label_id must be a valid class index")
        return self


@dataclass
class TrainConfig:
    stage: str = "train"
    alpha_train: float = 32.0
    alpha_finetune: float = 16.0
    learning_rate: float = 1e-4
    finetune_lr_factor: float = 0.1
    batch_size: int = 8
    max_epochs: int = 30
    seed: int = 0
    optimizer: str = "adam"
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    early_stop_patience: int = 10
    val_fraction: float = 0.1
    augment: bool = False
    brightness_jitter: float = 0.1
    image_label_weight: float = 1.0
    mask_loss_weight: float = 1.0
    deterministic: bool = True

    def validate(self) -> "TrainConfig":
        if self.stage not in ("train", "finetune"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if not 0.0 < self.finetune_lr_factor < 1.0:
            raise ConfigError("finetune_lr_factor must lie in (0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and max_epochs >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if not (self.alpha_train > 0 and self.alpha_finetune > 0):
            raise ConfigError("alpha values must be > 0")
        self.betas = tuple(float(b) for b in self.betas)
        return self


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    crf: CrfParams = field(default_factory=CrfParams)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "ExperimentConfig":
        self.model.validate()
        self.crf.validate()
        self.train.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["model"]["input_size"] = list(self.model.input_size)
        d["train"]["betas"] = list(self.train.betas)
        return d


def _build(cls, values: dict[str, Any] | None, section: str):
    values = dict(values or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")
    return cls(**values)


def config_from_dict(data: dict[str, Any] | None) -> ExperimentConfig:
    data = dict(data or {})
    unknown = sorted(set(data) - {"model", "crf", "train"})
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    cfg = ExperimentConfig(
        model=_build(ModelConfig, data.get("model"), "model"),
        crf=_build(CrfParams, data.get("crf"), "crf"),
        train=_build(TrainConfig, data.get("train"), "train"),
    )
    return cfg.validate()


def load_config(path: str | os.PathLike | None = None, seed: int | None = None) -> ExperimentConfig:
    """Load an experiment config, applying env and explicit seed overrides.

    Precedence for the seed: explicit ``seed`` argument, then the
    ``WCDNET_SEED`` environment variable, then the file.
    """
    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    cfg = config_from_dict(data)
    env_seed = os.environ.get(SEED_ENV)
    if seed is not None:
        cfg.train.seed = int(seed)
    elif env_seed is not None:
        cfg.train.seed = int(env_seed)
    return cfg


def save_config(cfg: ExperimentConfig, path: str | os.PathLike) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")


def output_root(default: str | os.PathLike) -> Path:
    """Return ``WCDNET_OUT`` if set, else ``default``."""
    return Path(os.environ.get(OUT_ENV, default))


def toy_config(**train_overrides: Any) -> ExperimentConfig:
    """Desk-scale configuration used by the synthetic experiments."""
    cfg = ExperimentConfig(
        model=ModelConfig(
            input_size=(64, 64),
            num_classes=4,
            filter_schedule=[32, 32, 16, 16, 8, 8],
            encoder_width=0.125,
            head_width=8,
            residual_width=8,
            fusion_hidden=64,
        ),
        train=TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=30),
    )
    for k, v in train_overrides.items():
        setattr(cfg.train, k, v)
    return cfg.validate()
