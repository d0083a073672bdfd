"""Pixelwise non-local means."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..imaging import ImagePlane


def _box_mean(a: np.ndarray, r: int, out_shape) -> np.ndarray:
    """Mean over (2r+1)^2 windows; ``a`` carries an r-pixel margin on each side."""
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    k = 2 * r + 1
    h, w = out_shape
    s = c[k:k + h, k:k + w] - c[:h, k:k + w] - c[k:k + h, :w] + c[:h, :w]
    return s / (k * k)


def nlm_array(f: np.ndarray, patch_radius: int = 1, search_radius: int = 5, h: float = 10.0) -> np.ndarray:
    """Non-local means with weights ``exp(-d^2 / h^2)``.

    ``d^2`` is the mean squared difference between the (2*patch_radius+1)^2
    patches around the two pixels. Candidates cover the
    (2*search_radius+1)^2 window around each pixel, including the pixel
    itself. The image is extended by reflection for patches and windows
    that cross the border.
    """
    if patch_radius < 1 or search_radius < 1:
        raise ConfigError("patch and search radii must be >= 1")
    if not h > 0:
        raise ConfigError("h must be positive")
    f = np.asarray(f, dtype=np.float64)
    H, W = f.shape
    r, s = patch_radius, search_radius
    pad = r + s
    P = np.pad(f, pad, mode="reflect") if min(H, W) > pad else np.pad(f, pad, mode="symmetric")
    ref = P[s:s + H + 2 * r, s:s + W + 2 * r]
    num = np.zeros_like(f)
    den = np.zeros_like(f)
    inv_h2 = 1.0 / (h * h)
    for di in range(-s, s + 1):
        for dj in range(-s, s + 1):
            cand = P[s + di:s + di + H + 2 * r, s + dj:s + dj + W + 2 * r]
            d2 = _box_mean((ref - cand) ** 2, r, (H, W))
            w = np.exp(-d2 * inv_h2)
            num += w * (P[pad + di:pad + di + H, pad + dj:pad + dj + W] - f)
            den += w
    # Averaging offsets from f keeps constant images exactly fixed.
    return f + num / den


def nlm(img: ImagePlane, patch_radius: int = 1, search_radius: int = 5, h: float = 10.0) -> ImagePlane:
    return img.with_data(nlm_array(img.data, patch_radius, search_radius, h))
