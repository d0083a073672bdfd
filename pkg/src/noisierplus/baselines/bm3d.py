"""Compact two-stage BM3D (block matching + collaborative 3-D filtering).

This is a simplified grayscale BM3D: square 8x8 blocks, orthonormal 2-D DCT
per block and 1-D DCT across the group, hard thresholding in stage one and
empirical Wiener shrinkage in stage two, Kaiser-windowed weighted
aggregation. It omits the original's fast transforms, the pre-matching
2-D threshold for very high noise, and colour handling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct, dctn, idct, idctn

from ..errors import ConfigError
from ..imaging import ImagePlane


@dataclass(frozen=True)
class BM3DParams:
    block: int = 8
    step: int = 3
    search_radius: int = 9
    max_group: int = 16
    lambda_3d: float = 2.7
    tau_match_ht: float = 2500.0
    tau_match_wiener: float = 400.0
    kaiser_beta: float = 2.0


def _positions(n: int, block: int, step: int) -> list:
    pos = list(range(0, n - block + 1, step))
    if pos[-1] != n - block:
        pos.append(n - block)
    return pos


def _match(blocks, ry, rx, radius, tau, max_group):
    """Return (ys, xs) of the closest blocks to (ry, rx), reference first."""
    ny, nx = blocks.shape[:2]
    y0, y1 = max(ry - radius, 0), min(ry + radius + 1, ny)
    x0, x1 = max(rx - radius, 0), min(rx + radius + 1, nx)
    win = blocks[y0:y1, x0:x1]
    ref = blocks[ry, rx]
    d = np.mean((win - ref) ** 2, axis=-1).ravel()
    cand = np.flatnonzero(d <= tau)
    order = cand[np.argsort(d[cand], kind="stable")]
    # Reference block has distance 0 and comes first under stable sort only if
    # no tie precedes it; force it to the front.
    ref_flat = (ry - y0) * (x1 - x0) + (rx - x0)
    order = np.concatenate([[ref_flat], order[order != ref_flat]])
    k = 1 << int(np.log2(min(len(order), max_group)))
    order = order[:k]
    w = x1 - x0
    return order // w + y0, order % w + x0


def _bm3d_stage(noisy, basic, sigma, p: BM3DParams, wiener: bool):
    H, W = noisy.shape
    b = p.block
    guide = basic if wiener else noisy
    guide_blocks = sliding_window_view(guide, (b, b)).reshape(H - b + 1, W - b + 1, b * b)
    noisy_blocks = sliding_window_view(noisy, (b, b))
    basic_blocks = sliding_window_view(basic, (b, b)) if wiener else None
    kaiser = np.outer(np.kaiser(b, p.kaiser_beta), np.kaiser(b, p.kaiser_beta))
    num = np.zeros_like(noisy)
    den = np.zeros_like(noisy)
    tau = p.tau_match_wiener if wiener else p.tau_match_ht
    thr = p.lambda_3d * sigma

    for ry in _positions(H, b, p.step):
        for rx in _positions(W, b, p.step):
            ys, xs = _match(guide_blocks, ry, rx, p.search_radius, tau, p.max_group)
            group = dctn(noisy_blocks[ys, xs], axes=(1, 2), norm="ortho")
            spec = dct(group, axis=0, norm="ortho")
            if wiener:
                est_spec = dct(dctn(basic_blocks[ys, xs], axes=(1, 2), norm="ortho"), axis=0, norm="ortho")
                shrink = est_spec**2 / (est_spec**2 + sigma**2)
                shrink[0, 0, 0] = 1.0
                spec = spec * shrink
                weight = 1.0 / (sigma**2 * max(float(np.sum(shrink**2)), 1e-12))
            else:
                keep = np.abs(spec) >= thr
                keep[0, 0, 0] = True
                spec = spec * keep
                weight = 1.0 / (sigma**2 * max(int(keep.sum()), 1))
            est = idctn(idct(spec, axis=0, norm="ortho"), axes=(1, 2), norm="ortho")
            for blk, y, x in zip(est, ys, xs):
                num[y:y + b, x:x + b] += weight * kaiser * blk
                den[y:y + b, x:x + b] += weight * kaiser
    return num / den


def bm3d_array(f: np.ndarray, sigma: float, params: BM3DParams = BM3DParams()) -> np.ndarray:
    """Denoise ``f`` assuming additive noise of standard deviation ``sigma``."""
    if not sigma > 0:
        raise ConfigError("BM3D sigma must be positive")
    f = np.asarray(f, dtype=np.float64)
    if min(f.shape) < params.block:
        raise ConfigError(f"image {f.shape} smaller than BM3D block {params.block}")
    # Working on f - mean keeps constant images exactly fixed.
    mean = float(f.mean())
    g = f - mean
    if not np.any(g):
        return f.copy()
    basic = _bm3d_stage(g, g, sigma, params, wiener=False)
    final = _bm3d_stage(g, basic, sigma, params, wiener=True)
    return final + mean


def bm3d(img: ImagePlane, sigma_est: float, params: BM3DParams = BM3DParams()) -> ImagePlane:
    return img.with_data(bm3d_array(img.data, sigma_est, params))
