"""Building blocks: VGG16-style encoders, the siamese U-Net, comparison chain
and the classification-side blocks."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

# VGG16 stage layout: (number of 3x3 convs, channels at full width)
VGG16_STAGES = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))
DECODER_CHANNELS = (256, 128, 64, 32, 16)


def scaled(channels: int, width: float) -> int:
    return max(1, int(round(channels * width)))


def conv_bn_relu(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class VGGEncoder(nn.Module):
    """VGG16 convolutional stages (with batch norm) and a width multiplier.

    ``forward`` returns the output of each stage *before* its pooling layer,
    finest first.
    """

    def __init__(self, in_channels: int = 3, width: float = 1.0):
        super().__init__()
        stages = []
        ch = in_channels
        for n_convs, base in VGG16_STAGES:
            out = scaled(base, width)
            layers = []
            for _ in range(n_convs):
                layers.append(conv_bn_relu(ch, out))
                ch = out
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)
        self.channels = [scaled(base, width) for _, base in VGG16_STAGES]
        self.out_channels = ch

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        skips = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = F.max_pool2d(x, 2)
            x = stage(x)
            skips.append(x)
        return skips


class DecoderBlock(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Sequential(conv_bn_relu(in_ch + skip_ch, out_ch), conv_bn_relu(out_ch, out_ch))

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.conv(torch.cat([x, skip], dim=1))


class UNet(nn.Module):
    """U-Net with a VGG16 encoder that exposes its decoder feature pyramid.

    The pyramid holds the map fed to every up-sampling step plus the final
    full-resolution decoder output: six levels from H/32 to H.
    """

    num_levels = 6

    def __init__(self, width: float = 1.0):
        super().__init__()
        self.encoder = VGGEncoder(3, width)
        enc = self.encoder.channels
        center_ch = scaled(512, width)
        self.center = nn.Sequential(conv_bn_relu(enc[-1], center_ch), conv_bn_relu(center_ch, center_ch))
        dec = [max(8, scaled(c, width)) for c in DECODER_CHANNELS]
        blocks = []
        ch = center_ch
        for skip_ch, out_ch in zip(reversed(enc), dec):
            blocks.append(DecoderBlock(ch, skip_ch, out_ch))
            ch = out_ch
        self.decoder = nn.ModuleList(blocks)
        self.level_channels = [center_ch] + dec

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        skips = self.encoder(x)
        y = self.center(F.max_pool2d(skips[-1], 2))
        levels = [y]
        for block, skip in zip(self.decoder, reversed(skips)):
            y = block(y, skip)
            levels.append(y)
        return levels


class ComparisonBlock(nn.Module):
    """Compares one pyramid level of both branches.

    The pair is combined as ``|prev - curr|`` so the block is symmetric in its
    two inputs; the up-sampled output of the previous block is concatenated
    before two conv + ReLU + batch-norm layers.
    """

    def __init__(self, feat_ch: int, upstream_ch: int, width: int):
        super().__init__()
        self.width = width
        self.upstream_ch = upstream_ch
        self.layers = nn.Sequential(
            nn.Conv2d(feat_ch + upstream_ch, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.BatchNorm2d(width),
            nn.Conv2d(width, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.BatchNorm2d(width),
        )

    @staticmethod
    def combine(feat_prev: torch.Tensor, feat_curr: torch.Tensor, upstream: torch.Tensor | None) -> torch.Tensor:
        if feat_prev.shape != feat_curr.shape:
            raise ValueError(
                f"branch feature shapes differ: {tuple(feat_prev.shape)} vs {tuple(feat_curr.shape)}"
            )
        diff = torch.abs(feat_prev - feat_curr)
        if upstream is None:
            return diff
        if upstream.shape[-2:] != diff.shape[-2:]:
            raise ValueError("upstream map must match the feature resolution")
        return torch.cat([diff, upstream], dim=1)

    def forward(self, feat_prev, feat_curr, upstream=None):
        if (upstream is None) != (self.upstream_ch == 0):
            raise ValueError("upstream input inconsistent with block construction")
        return self.layers(self.combine(feat_prev, feat_curr, upstream))


class RawMaskHead(nn.Module):
    """Three convolutions with ReLU producing the single-channel raw change mask."""

    def __init__(self, in_ch: int, hidden: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(in_ch, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 1, 3, padding=1),
            nn.ReLU(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class SegmentedEncoder(nn.Module):
    """VGG16 encoder for the segmented current image, globally average pooled."""

    def __init__(self, width: float = 1.0):
        super().__init__()
        self.encoder = VGGEncoder(3, width)
        self.out_features = self.encoder.out_channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)[-1].mean(dim=(2, 3))


class ResidualBlock(nn.Module):
    """Features of the *un-remapped* raw mask, so absolute activation scale survives.

    Four stride-2 3x3 convolutions; the output of the second is average
    pooled and added to the fourth before global average pooling.
    """

    def __init__(self, width: int = 16, out_features: int | None = None):
        super().__init__()
        out_features = out_features or 2 * width
        self.conv1 = nn.Conv2d(1, width, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(width, width, 3, stride=2, padding=1)
        self.conv4 = nn.Conv2d(width, width, 3, stride=2, padding=1)
        self.fc = nn.Linear(width, out_features)
        self.out_features = out_features

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.conv1(raw))
        skip = F.relu(self.conv2(x))
        x = F.relu(self.conv3(skip))
        x = self.conv4(x)
        x = F.relu(x + F.avg_pool2d(skip, 4))
        return self.fc(x.mean(dim=(2, 3)))


class FusionBlock(nn.Module):
    """Concatenate the branch vectors and classify into ``num_classes``."""

    def __init__(self, seg_features: int, res_features: int, num_classes: int, hidden: int = 256):
        super().__init__()
        self.res_features = res_features
        self.fc1 = nn.Linear(seg_features + res_features, hidden)
        self.fc2 = nn.Linear(hidden, num_classes)

    def logits(self, seg_vec: torch.Tensor, res_vec: torch.Tensor | None) -> torch.Tensor:
        if (res_vec is None) != (self.res_features == 0):
            raise ValueError(
                "residual feature vector must be given iff the residual block is enabled"
            )
        x = seg_vec if res_vec is None else torch.cat([seg_vec, res_vec], dim=1)
        return self.fc2(F.relu(self.fc1(x)))

    def forward(self, seg_vec, res_vec=None):
        return torch.softmax(self.logits(seg_vec, res_vec), dim=1)


def init_weights(module: nn.Module) -> None:
    """Normal (He) initialisation for weights, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
