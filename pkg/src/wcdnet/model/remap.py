"""Remapping of the raw change mask and segmentation of the current image."""

from __future__ import annotations

import torch
from torch import nn


def remap(raw: torch.Tensor, alpha: float) -> torch.Tensor:
    """Min-max normalise ``raw`` per sample and squash it with a scaled sigmoid.

    The minimum of each sample maps to ``sigmoid(-alpha / 2)`` and the maximum
    to ``sigmoid(alpha / 2)``. A constant sample maps to 0.5 everywhere and
    passes no gradient.

    Args:
        raw: Non-negative tensor of shape ``(B, ...)``; statistics are taken
            over all non-batch dimensions.
        alpha: Sharpness, must be positive.

    Returns:
        Tensor of the same shape with values in ``[0, 1]``.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not torch.isfinite(raw).all():
        raise ValueError("raw change mask contains NaN or Inf")
    flat = raw.reshape(raw.shape[0], -1)
    lo = flat.min(dim=1).values
    hi = flat.max(dim=1).values
    span = hi - lo
    degenerate = span <= 0
    # keep the unused branch finite so where() does not leak NaN gradients
    safe_span = torch.where(degenerate, torch.ones_like(span), span)
    shape = (-1,) + (1,) * (raw.dim() - 1)
    scaled = (raw - lo.view(shape)) / safe_span.view(shape) * alpha - alpha / 2
    mapped = torch.where(degenerate.view(shape), torch.zeros_like(scaled), scaled)
    return torch.sigmoid(mapped)


def segment_current(current: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Multiply every colour channel of ``current`` (B,3,H,W) by ``mask`` (B,1,H,W)."""
    if current.shape[-2:] != mask.shape[-2:] or current.shape[0] != mask.shape[0]:
        raise ValueError(
            f"mask {tuple(mask.shape)} does not match image {tuple(current.shape)}"
        )
    if mask.dim() == 3:
        mask = mask.unsqueeze(1)
    if mask.shape[1] != 1:
        raise ValueError("mask must have a single channel")
    return current * mask


class Remap(nn.Module):
    def __init__(self, alpha: float):
        super().__init__()
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        self.alpha = float(alpha)

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        return remap(raw, self.alpha)

    def extra_repr(self) -> str:
        return f"alpha={self.alpha}"
