"""Two-label fully connected CRF refinement by mean-field iterations.

Labels are ordered (no-change, change). Pairwise kernels are a spatial
Gaussian and a bilateral (position + guide colour) Gaussian, each truncated
to a square window and normalised over the in-image neighbours of a pixel,
excluding the pixel itself.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..config import CrfParams
from .filtering import get_filter

EPS = 1e-6


def _window_offsets(radius: int, device=None, dtype=None):
    r = torch.arange(-radius, radius + 1, device=device, dtype=dtype)
    dy, dx = torch.meshgrid(r, r, indexing="ij")
    return dy.reshape(-1), dx.reshape(-1)


def window_weights(guide: torch.Tensor, radius: int, sigma_space, sigma_color=None) -> torch.Tensor:
    """Normalised kernel weights of shape (B, K, H*W), K = (2r+1)^2.

    ``guide`` is (B, 3, H, W). Without ``sigma_color`` the kernel is purely
    spatial and the guide only fixes shape, dtype and device.
    """
    b, _, h, w = guide.shape
    k = 2 * radius + 1
    dy, dx = _window_offsets(radius, guide.device, guide.dtype)
    sigma_space = torch.as_tensor(sigma_space, dtype=guide.dtype, device=guide.device)
    logw = -(dy * dy + dx * dx).view(1, -1, 1) / (2 * sigma_space * sigma_space)
    ones = torch.ones(1, 1, h, w, dtype=guide.dtype, device=guide.device)
    valid = F.unfold(ones, k, padding=radius)  # (1, K, HW)
    valid[:, (k * k) // 2, :] = 0  # no self-message
    if sigma_color is not None:
        sigma_color = torch.as_tensor(sigma_color, dtype=guide.dtype, device=guide.device)
        c = guide.shape[1]
        nb = F.unfold(guide, k, padding=radius).view(b, c, k * k, h * w)
        centre = guide.reshape(b, c, 1, h * w)
        dist = ((nb - centre) ** 2).sum(dim=1)
        logw = logw - dist / (2 * sigma_color * sigma_color)
    weights = torch.exp(logw) * valid
    return weights / weights.sum(dim=1, keepdim=True).clamp_min(1e-300)


def pass_messages(q: torch.Tensor, weights: torch.Tensor, radius: int) -> torch.Tensor:
    b, c, h, w = q.shape
    k = 2 * radius + 1
    nb = F.unfold(q, k, padding=radius).view(b, c, k * k, h * w)
    msg = (nb * weights.unsqueeze(1)).sum(dim=2)
    return msg.view(b, c, h, w)


def unary_from_mask(mask: torch.Tensor) -> torch.Tensor:
    """Unary energies (B, 2, H, W) = -log of (1 - mask, mask), clamped."""
    p = mask.clamp(EPS, 1 - EPS)
    return -torch.log(torch.cat([1 - p, p], dim=1))


def mean_field(
    mask: torch.Tensor,
    guide: torch.Tensor,
    *,
    spatial_weight,
    bilateral_weight,
    compatibility,
    spatial_sigma,
    bilateral_sigma_space,
    bilateral_sigma_color,
    iterations: int,
    radius: int,
    history: list | None = None,
) -> torch.Tensor:
    """Run mean-field inference and return the change marginal (B, 1, H, W).

    If ``history`` is a list, the (B, 2, H, W) marginals after every
    iteration are appended to it.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if mask.dim() == 3:
        mask = mask.unsqueeze(1)
    if mask.shape[-2:] != guide.shape[-2:]:
        raise ValueError("mask and guide image must share spatial size")
    if torch.isnan(mask).all():
        raise ValueError("mask is all NaN; cannot normalise")
    unary = unary_from_mask(mask)
    w_spatial = window_weights(guide, radius, spatial_sigma)
    w_bilateral = window_weights(guide, radius, bilateral_sigma_space, bilateral_sigma_color)
    compat = torch.as_tensor(compatibility, dtype=mask.dtype, device=mask.device)
    q = torch.softmax(-unary, dim=1)
    for _ in range(iterations):
        msg = spatial_weight * pass_messages(q, w_spatial, radius) + bilateral_weight * pass_messages(
            q, w_bilateral, radius
        )
        pairwise = torch.einsum("lm,bmhw->blhw", compat, msg)
        q = torch.softmax(-unary - pairwise, dim=1)
        if history is not None:
            history.append(q)
    return q[:, 1:2]


def _as_tensor(x, dtype=None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=dtype or torch.float64)


def mean_field_refine(soft_mask, guide_image, params: CrfParams | None = None, history=None):
    """Refine a soft change mask with the in-graph (differentiable) engine.

    ``soft_mask`` is (H, W), (B, H, W) or (B, 1, H, W); ``guide_image`` is
    (3, H, W) or (B, 3, H, W). Returns the refined mask in the input layout.
    """
    params = (params or CrfParams()).validate()
    mask = _as_tensor(soft_mask)
    guide = _as_tensor(guide_image, mask.dtype)
    in_dim = mask.dim()
    if in_dim == 2:
        mask = mask.view(1, 1, *mask.shape)
    elif in_dim == 3:
        mask = mask.unsqueeze(1)
    if guide.dim() == 3:
        guide = guide.unsqueeze(0)
    if guide.shape[-2:] != mask.shape[-2:]:
        raise ValueError("mask and guide image must share spatial size")
    out = mean_field(
        mask,
        guide.to(mask.dtype),
        spatial_weight=params.spatial_weight,
        bilateral_weight=params.bilateral_weight,
        compatibility=params.compatibility,
        spatial_sigma=params.spatial_sigma,
        bilateral_sigma_space=params.bilateral_sigma_space,
        bilateral_sigma_color=params.bilateral_sigma_color,
        iterations=params.iterations,
        radius=params.kernel_truncation_radius,
        history=history,
    )
    if in_dim == 2:
        return out[0, 0]
    if in_dim == 3:
        return out[:, 0]
    return out


class CrfRnn(nn.Module):
    """Mean-field CRF as a trainable layer.

    Kernel weights and the label compatibility matrix are learned; the
    kernel bandwidths stay fixed.
    """

    def __init__(self, params: CrfParams | None = None, iterations: int | None = None):
        super().__init__()
        params = (params or CrfParams()).validate()
        self.iterations = int(iterations or params.iterations)
        self.radius = int(params.kernel_truncation_radius)
        self.spatial_weight = nn.Parameter(torch.tensor(float(params.spatial_weight)))
        self.bilateral_weight = nn.Parameter(torch.tensor(float(params.bilateral_weight)))
        self.compatibility = nn.Parameter(torch.tensor(params.compatibility, dtype=torch.float32))
        self.register_buffer("spatial_sigma", torch.tensor(float(params.spatial_sigma)))
        self.register_buffer("bilateral_sigma_space", torch.tensor(float(params.bilateral_sigma_space)))
        self.register_buffer("bilateral_sigma_color", torch.tensor(float(params.bilateral_sigma_color)))

    def forward(self, mask: torch.Tensor, guide: torch.Tensor) -> torch.Tensor:
        return mean_field(
            mask,
            guide,
            spatial_weight=self.spatial_weight,
            bilateral_weight=self.bilateral_weight,
            compatibility=self.compatibility,
            spatial_sigma=self.spatial_sigma,
            bilateral_sigma_space=self.bilateral_sigma_space,
            bilateral_sigma_color=self.bilateral_sigma_color,
            iterations=self.iterations,
            radius=self.radius,
        )

    def params(self) -> CrfParams:
        """Current values as a plain :class:`CrfParams`."""
        return CrfParams(
            spatial_sigma=float(self.spatial_sigma),
            bilateral_sigma_space=float(self.bilateral_sigma_space),
            bilateral_sigma_color=float(self.bilateral_sigma_color),
            spatial_weight=float(self.spatial_weight.detach()),
            bilateral_weight=float(self.bilateral_weight.detach()),
            compatibility=self.compatibility.detach().double().tolist(),
            iterations=self.iterations,
            kernel_truncation_radius=self.radius,
        )


def mean_field_numpy(mask, guide, params: CrfParams, backend: str | None = None, history=None):
    """Forward-only mean-field on numpy arrays, using the compiled kernel if available.

    ``mask`` is (H, W) in [0, 1], ``guide`` is (3, H, W).
    """
    params.validate()
    mask = np.asarray(mask, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    if mask.ndim != 2 or guide.shape != (3,) + mask.shape:
        raise ValueError(f"expected mask (H, W) and guide (3, H, W), got {mask.shape}, {guide.shape}")
    if np.isnan(mask).all():
        raise ValueError("mask is all NaN; cannot normalise")
    filt = get_filter(backend)
    p = np.clip(mask, EPS, 1 - EPS)
    unary = -np.log(np.stack([1 - p, p]))
    compat = np.asarray(params.compatibility, dtype=np.float64)
    r = params.kernel_truncation_radius

    def softmax(e):
        e = e - e.max(axis=0, keepdims=True)
        x = np.exp(e)
        return x / x.sum(axis=0, keepdims=True)

    q = softmax(-unary)
    for _ in range(params.iterations):
        msg = params.spatial_weight * filt(q, guide, params.spatial_sigma, 0.0, r)
        msg += params.bilateral_weight * filt(
            q, guide, params.bilateral_sigma_space, params.bilateral_sigma_color, r
        )
        pairwise = np.einsum("lm,mhw->lhw", compat, msg)
        q = softmax(-unary - pairwise)
        if history is not None:
            history.append(q)
    return q[1]


def postprocess_crf(mask, guide_image, params: CrfParams | None = None, backend: str | None = None):
    """Non-learned CRF refinement applied after inference.

    Accepts a soft or binary (H, W) mask, or a batch (B, H, W) with guides
    (B, 3, H, W). Returns float64 masks in [0, 1].
    """
    params = CrfParams(**asdict(params)) if params is not None else CrfParams()
    mask = np.asarray(mask, dtype=np.float64)
    guide = np.asarray(guide_image, dtype=np.float64)
    if mask.ndim == 3:
        return np.stack([mean_field_numpy(m, g, params, backend) for m, g in zip(mask, guide)])
    return mean_field_numpy(mask, guide, params, backend)
