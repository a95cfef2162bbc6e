"""Pure numpy fallback for the truncated-window message passing kernel."""

from __future__ import annotations

import numpy as np


def truncated_filter(q, guide, sigma_space, sigma_color, radius):
    """Normalised truncated Gaussian (or bilateral) filtering of ``q``.

    Each output pixel is the weighted mean of ``q`` over the other pixels in
    its ``(2r+1)^2`` window that lie inside the image; the centre pixel is
    excluded. With ``sigma_color <= 0`` the weights are purely spatial.

    Args:
        q: float64 array (C, H, W).
        guide: float64 array (3, H, W), only read when ``sigma_color > 0``.
        sigma_space: spatial standard deviation in pixels.
        sigma_color: colour standard deviation in guide intensity units.
        radius: half window size in pixels.

    Returns:
        float64 array (C, H, W).
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    guide = np.ascontiguousarray(guide, dtype=np.float64)
    c, h, w = q.shape
    acc = np.zeros_like(q)
    norm = np.zeros((h, w))
    inv_s = 1.0 / (2.0 * sigma_space * sigma_space)
    bilateral = sigma_color > 0
    inv_c = 1.0 / (2.0 * sigma_color * sigma_color) if bilateral else 0.0
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            # target rows/cols i such that i + d stays inside the image
            y0, y1 = max(0, -dy), min(h, h - dy)
            x0, x1 = max(0, -dx), min(w, w - dx)
            if y0 >= y1 or x0 >= x1:
                continue
            src = (slice(y0 + dy, y1 + dy), slice(x0 + dx, x1 + dx))
            dst = (slice(y0, y1), slice(x0, x1))
            weight = np.full((y1 - y0, x1 - x0), np.exp(-(dy * dy + dx * dx) * inv_s))
            if bilateral:
                diff = guide[(slice(None),) + dst] - guide[(slice(None),) + src]
                weight = weight * np.exp(-(diff * diff).sum(axis=0) * inv_c)
            acc[(slice(None),) + dst] += weight * q[(slice(None),) + src]
            norm[dst] += weight
    np.divide(acc, norm, out=acc, where=norm > 0)
    return acc
