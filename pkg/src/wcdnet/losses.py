"""Image-level and conditional mask losses."""

from __future__ import annotations

from typing import NamedTuple

import torch

CLAMP = 1e-7


class LossBundle(NamedTuple):
    image_label_loss: torch.Tensor
    mask_loss: torch.Tensor
    total: torch.Tensor


def image_label_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Categorical cross-entropy ``-sum(target * log(clamp(pred)))``, averaged over a batch.

    ``pred`` and ``target`` are (N,) or (B, N); ``target`` is one-hot.
    """
    if pred.shape != target.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    per_sample = -(target * torch.log(pred.clamp(CLAMP, 1.0))).sum(dim=-1)
    return per_sample.mean() if per_sample.dim() else per_sample


def conditional_mask_loss(pred_mask: torch.Tensor, gt_mask: torch.Tensor) -> torch.Tensor:
    """Pixel-mean binary cross-entropy, or exactly zero for an all-zero ground truth.

    Both inputs have shape (H, W) or (B, ...). For batches the gating is per
    sample and the result is the batch mean.
    """
    if pred_mask.shape != gt_mask.shape:
        raise ValueError(f"mask shapes differ: {tuple(pred_mask.shape)} vs {tuple(gt_mask.shape)}")
    gt = gt_mask.to(pred_mask.dtype)
    if not torch.all((gt == 0) | (gt == 1)):
        raise ValueError("ground truth mask must be binary")
    if pred_mask.dim() <= 2:
        pred_mask, gt = pred_mask.unsqueeze(0), gt.unsqueeze(0)
    p = pred_mask.clamp(CLAMP, 1 - CLAMP).reshape(pred_mask.shape[0], -1)
    g = gt.reshape(gt.shape[0], -1)
    bce = -(g * torch.log(p) + (1 - g) * torch.log(1 - p)).mean(dim=1)
    has_change = g.amax(dim=1) > 0
    # where() instead of multiplication keeps the gradient exactly zero when gated
    gated = torch.where(has_change, bce, torch.zeros_like(bce))
    return gated.mean()


def total_loss(
    class_probabilities: torch.Tensor,
    target_label: torch.Tensor,
    change_mask: torch.Tensor | None = None,
    target_mask: torch.Tensor | None = None,
    mode: str = "weak",
    image_label_weight: float = 1.0,
    mask_loss_weight: float = 1.0,
) -> LossBundle:
    """Combine the losses for ``mode`` in {'weak', 'full_multitask'}.

    ``target_label`` is either integer class ids (B,) or one-hot (B, N).
    """
    if target_label.dim() == class_probabilities.dim() - 1:
        target_label = torch.nn.functional.one_hot(
            target_label.long(), class_probabilities.shape[-1]
        ).to(class_probabilities.dtype)
    il = image_label_loss(class_probabilities, target_label)
    if mode == "weak":
        cm = torch.zeros((), dtype=il.dtype)
    elif mode == "full_multitask":
        if target_mask is None or change_mask is None:
            raise ValueError("full_multitask mode needs a predicted and a ground-truth mask")
        if change_mask.dim() == target_mask.dim() + 1:
            change_mask = change_mask[:, 0]
        cm = conditional_mask_loss(change_mask, target_mask)
    else:
        raise ValueError(f"unknown supervision mode {mode!r}")
    il_w = il if image_label_weight == 1.0 else image_label_weight * il
    cm_w = cm if mask_loss_weight == 1.0 else mask_loss_weight * cm
    return LossBundle(il, cm, il_w + cm_w)
