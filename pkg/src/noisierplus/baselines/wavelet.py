"""Wavelet denoising with BayesShrink soft thresholding (PyWavelets filter bank)."""

from __future__ import annotations

import numpy as np
import pywt

from ..errors import ConfigError
from ..imaging import ImagePlane

MAD_TO_SIGMA = 0.6745


def estimate_noise_sigma(arr, family: str = "db4") -> float:
    """Noise std from the median absolute finest diagonal coefficient / 0.6745."""
    _, (_, _, hh) = pywt.dwt2(np.asarray(arr, dtype=np.float64), family, mode="periodization")
    return float(np.median(np.abs(hh)) / MAD_TO_SIGMA)


def bayes_threshold(coeffs: np.ndarray, sigma: float) -> float:
    """sigma^2 / sigma_x for one subband, with sigma_x^2 = max(E[c^2] - sigma^2, 0)."""
    if sigma == 0:
        return 0.0
    sigma_x = np.sqrt(max(float(np.mean(coeffs**2)) - sigma**2, 0.0))
    if sigma_x == 0:
        return float(np.max(np.abs(coeffs)))
    return sigma**2 / sigma_x


def max_levels(shape, family: str = "db4") -> int:
    return pywt.dwt_max_level(min(shape), pywt.Wavelet(family).dec_len)


def wavelet_bayes_shrink_array(f: np.ndarray, family: str = "db4", levels: int | None = None,
                               threshold_scale: float = 1.0) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    top = max_levels(f.shape, family)
    if levels is None:
        levels = min(3, top)
    if levels < 1 or levels > top:
        raise ConfigError(f"{levels} wavelet levels not feasible for a {f.shape[0]}x{f.shape[1]} image "
                          f"(max {top} for {family})")
    if threshold_scale < 0:
        raise ConfigError("threshold_scale must be nonnegative")
    coeffs = pywt.wavedec2(f, family, mode="periodization", level=levels)
    sigma = float(np.median(np.abs(coeffs[-1][2])) / MAD_TO_SIGMA)
    out = [coeffs[0]]
    for detail in coeffs[1:]:
        out.append(tuple(
            pywt.threshold(c, threshold_scale * bayes_threshold(c, sigma), mode="soft") for c in detail
        ))
    rec = pywt.waverec2(out, family, mode="periodization")
    return rec[: f.shape[0], : f.shape[1]]


def wavelet_bayes_shrink(img: ImagePlane, family: str = "db4", levels: int | None = None,
                         threshold_scale: float = 1.0) -> ImagePlane:
    """Multi-level orthogonal decomposition, per-subband BayesShrink soft threshold, reconstruction.

    ``threshold_scale`` multiplies every BayesShrink threshold; 0 disables
    thresholding (perfect reconstruction).
    """
    return img.with_data(wavelet_bayes_shrink_array(img.data, family, levels, threshold_scale))
