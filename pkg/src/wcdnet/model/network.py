"""The full weakly supervised change detection network."""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from ..config import CrfParams, ModelConfig
from ..crf import CrfRnn
from .blocks import (
    ComparisonBlock,
    FusionBlock,
    RawMaskHead,
    ResidualBlock,
    SegmentedEncoder,
    UNet,
    init_weights,
)
from .remap import remap, segment_current


class ModelOutput(NamedTuple):
    class_probabilities: torch.Tensor  # (B, N)
    change_mask: torch.Tensor  # (B, 1, H, W), soft, after CRF when enabled
    raw_mask: torch.Tensor  # (B, 1, H, W), non-negative
    logits: torch.Tensor  # (B, N)


class WCDNet(nn.Module):
    def __init__(self, config: ModelConfig, crf_params: CrfParams | None = None):
        super().__init__()
        self.config = config.validate()
        self.crf_params = crf_params or CrfParams()
        self.unet = UNet(config.encoder_width)
        levels = self.unet.level_channels
        blocks = []
        upstream = 0
        for feat_ch, width in zip(levels, config.filter_schedule):
            blocks.append(ComparisonBlock(feat_ch, upstream, int(width)))
            upstream = int(width)
        self.comparison = nn.ModuleList(blocks)
        self.raw_head = RawMaskHead(upstream, config.head_width)
        self.segmented_encoder = SegmentedEncoder(config.encoder_width)
        if config.residual_block_enabled:
            self.residual = ResidualBlock(config.residual_width)
            res_features = self.residual.out_features
        else:
            self.residual = None
            res_features = 0
        self.fusion = FusionBlock(
            self.segmented_encoder.out_features, res_features, config.num_classes, config.fusion_hidden
        )
        init_weights(self)
        self.crf = CrfRnn(self.crf_params, config.crf_iterations) if config.crf_enabled else None

    @property
    def alpha(self) -> float:
        return self.config.alpha

    def _check_images(self, *images: torch.Tensor) -> None:
        for img in images:
            if img.dim() != 4 or img.shape[1] != 3 or tuple(img.shape[-2:]) != tuple(self.config.input_size):
                raise ValueError(
                    f"expected images of shape (B, 3, {self.config.input_size[0]}, "
                    f"{self.config.input_size[1]}), got {tuple(img.shape)}"
                )

    def extract_features(self, image: torch.Tensor) -> list[torch.Tensor]:
        """Six-level decoder feature pyramid, coarsest first."""
        self._check_images(image)
        return self.unet(image)

    def compare(self, pyr_prev: list[torch.Tensor], pyr_curr: list[torch.Tensor]) -> torch.Tensor:
        x = None
        for block, fp, fc in zip(self.comparison, pyr_prev, pyr_curr):
            if x is not None:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(fp, fc, x)
        return x

    def raw_mask(self, previous: torch.Tensor, current: torch.Tensor) -> torch.Tensor:
        self._check_images(previous, current)
        # both branches in one batch: a single parameter set and shared batch statistics
        levels = self.unet(torch.cat([previous, current], dim=0))
        b = previous.shape[0]
        pyr_prev = [lv[:b] for lv in levels]
        pyr_curr = [lv[b:] for lv in levels]
        return self.raw_head(self.compare(pyr_prev, pyr_curr))

    def forward(self, previous: torch.Tensor, current: torch.Tensor) -> ModelOutput:
        raw = self.raw_mask(previous, current)
        mask = remap(raw, self.config.alpha)
        if self.crf is not None:
            mask = self.crf(mask, current)
        seg_vec = self.segmented_encoder(segment_current(current, mask))
        res_vec = self.residual(raw) if self.residual is not None else None
        logits = self.fusion.logits(seg_vec, res_vec)
        return ModelOutput(torch.softmax(logits, dim=1), mask, raw, logits)


def build_model(config: ModelConfig, crf_params: CrfParams | None = None, seed: int | None = None) -> WCDNet:
    """Construct a network; ``seed`` makes the initialisation reproducible."""
    if seed is None:
        return WCDNet(config, crf_params)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return WCDNet(config, crf_params)


def binarize(output: ModelOutput, threshold: float, unchanged_label_id: int | None) -> torch.Tensor:
    """Binary change masks (B, H, W); pairs classified as unchanged get empty masks."""
    masks = output.change_mask[:, 0] >= threshold
    if unchanged_label_id is not None:
        unchanged = output.class_probabilities.argmax(dim=1) == unchanged_label_id
        masks = masks & ~unchanged.view(-1, 1, 1)
    return masks
