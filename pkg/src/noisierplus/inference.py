"""Full-image denoising: Anscombe + rescale, iterated network passes, tiling, inversion."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DivergenceError
from .imaging import (
    ANSCOMBE_RANGE,
    Domain,
    ImagePlane,
    InverseMode,
    anscombe_forward,
    anscombe_inverse,
    from_rescaled,
    psnr,
    to_rescaled,
)


@dataclass(frozen=True)
class InferenceConfig:
    iterations: int = 2
    tile_size: int = 128
    tile_overlap: int = 32
    inverse_mode: InverseMode = InverseMode.CLOSED_FORM_UNBIASED
    batch_size: int = 16

    def __post_init__(self):
        object.__setattr__(self, "inverse_mode", InverseMode(self.inverse_mode))
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.tile_size < 1 or self.tile_overlap < 0:
            raise ConfigError("tile_size must be positive and tile_overlap nonnegative")
        if self.tile_overlap >= self.tile_size:
            raise ConfigError(f"tile_overlap {self.tile_overlap} must be smaller than tile_size {self.tile_size}")

    def check_depth(self, depth: int) -> None:
        if self.tile_size % (2**depth):
            raise ConfigError(f"tile_size {self.tile_size} not divisible by 2^{depth}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inverse_mode"] = self.inverse_mode.value
        return d


def feather_profile(tile_size: int, overlap: int) -> np.ndarray:
    """1-D weight: linear ramps of length ``overlap`` at both ends, 1 inside."""
    w = np.ones(tile_size)
    if overlap:
        ramp = np.arange(1, overlap + 1) / (overlap + 1)
        w[:overlap] = ramp
        w[-overlap:] = np.minimum(w[-overlap:], ramp[::-1])
    return w


def tile_starts(length: int, tile_size: int, overlap: int) -> list:
    stride = tile_size - overlap
    starts = list(range(0, max(length - tile_size, 0) + 1, stride))
    if starts[-1] + tile_size < length:
        starts.append(length - tile_size)
    return starts


def tile_layout(shape, tile_size: int, overlap: int):
    """Padding and tile origins for an image of ``shape``.

    Returns ``(pad, padded_shape, origins)`` where ``pad`` is
    ``((top, bottom), (left, right))``. Images exactly one tile in size are
    processed unpadded; otherwise every side gets ``overlap`` pixels of
    reflection so border pixels are not left on a ramp, and the far sides
    are extended until the tiles fit exactly.
    """
    h, w = shape
    if (h, w) == (tile_size, tile_size):
        return ((0, 0), (0, 0)), (h, w), [(0, 0)]
    stride = tile_size - overlap
    pads = []
    for n in (h, w):
        lo = overlap
        total = n + 2 * overlap
        if total < tile_size:
            total = tile_size
        else:
            total = tile_size + -(-(total - tile_size) // stride) * stride
        pads.append((lo, total - n - lo))
    ph, pw = h + sum(pads[0]), w + sum(pads[1])
    origins = [(r, c) for r in tile_starts(ph, tile_size, overlap) for c in tile_starts(pw, tile_size, overlap)]
    return tuple(pads), (ph, pw), origins


def blend_weight_map(shape, tile_size: int, overlap: int) -> np.ndarray:
    """Sum of normalized blending weights over the unpadded image (all ones by construction)."""
    pad, padded, origins = tile_layout(shape, tile_size, overlap)
    prof = np.outer(feather_profile(tile_size, overlap), feather_profile(tile_size, overlap))
    acc = np.zeros(padded)
    for r, c in origins:
        acc[r:r + tile_size, c:c + tile_size] += prof
    total = np.zeros(padded)
    for r, c in origins:
        total[r:r + tile_size, c:c + tile_size] += prof / acc[r:r + tile_size, c:c + tile_size]
    (t, _), (l, _) = pad
    return total[t:t + shape[0], l:l + shape[1]]


def _pad(arr, pad):
    if not any(v for p in pad for v in p):
        return arr
    mode = "reflect" if min(arr.shape) > 1 else "edge"
    return np.pad(arr, pad, mode=mode)


def tile_process(model, img, tile_size: int, overlap: int, batch_size: int = 16):
    """Run ``model.apply`` over overlapping tiles and blend the results.

    ``img`` may be an ``ImagePlane`` (same domain is returned) or an array.
    """
    if overlap >= tile_size:
        raise ConfigError(f"tile_overlap {overlap} must be smaller than tile_size {tile_size}")
    arr = img.data if isinstance(img, ImagePlane) else np.asarray(img, dtype=np.float64)
    pad, padded_shape, origins = tile_layout(arr.shape, tile_size, overlap)
    src = _pad(arr, pad)
    if len(origins) == 1 and padded_shape == arr.shape:
        out = model.apply(src)
    else:
        prof = np.outer(feather_profile(tile_size, overlap), feather_profile(tile_size, overlap))
        num = np.zeros(padded_shape)
        den = np.zeros(padded_shape)
        for i in range(0, len(origins), batch_size):
            chunk = origins[i:i + batch_size]
            tiles = np.stack([src[r:r + tile_size, c:c + tile_size] for r, c in chunk])
            res = model.apply(tiles)
            for (r, c), t in zip(chunk, res):
                num[r:r + tile_size, c:c + tile_size] += prof * t
                den[r:r + tile_size, c:c + tile_size] += prof
        (t, _), (l, _) = pad
        out = (num / den)[t:t + arr.shape[0], l:l + arr.shape[1]]
    if isinstance(img, ImagePlane):
        return img.with_data(out)
    return out


def _to_pixels(rescaled: ImagePlane, mode: InverseMode) -> ImagePlane:
    # Estimates below the Anscombe image of 0 are clipped there; the
    # closed-form inverse is undefined for nonpositive values.
    ans = from_rescaled(rescaled)
    ans = ans.with_data(np.maximum(ans.data, ANSCOMBE_RANGE.lo))
    return anscombe_inverse(ans, mode)


def denoise_trace(model, noisy: ImagePlane, icfg: InferenceConfig, ground_truth: Optional[ImagePlane] = None):
    """Denoise and return ``(output, passes)``.

    ``passes[k]`` is the pixel-domain image after ``k + 1`` network passes;
    with ``ground_truth`` each entry is paired with its PSNR against it
    (computed on the [0, 255]-clamped image).
    """
    if noisy.domain is not Domain.PIXEL:
        raise ConfigError("denoise expects a pixel-domain image")
    icfg.check_depth(model.unet_config.depth)
    current = to_rescaled(anscombe_forward(noisy))
    passes = []
    for k in range(1, icfg.iterations + 1):
        out = tile_process(model, current.data, icfg.tile_size, icfg.tile_overlap, icfg.batch_size)
        if not np.all(np.isfinite(out)):
            raise DivergenceError(f"non-finite network output at inference iteration {k}")
        current = current.with_data(out)
        pix = _to_pixels(current, icfg.inverse_mode)
        score = None if ground_truth is None else psnr(ground_truth, np.clip(pix.data, 0, 255))
        passes.append((pix, score))
    return passes[-1][0], passes


def denoise(model, noisy: ImagePlane, icfg: InferenceConfig = InferenceConfig()) -> ImagePlane:
    """Pixel-domain noisy image -> pixel-domain estimate (unclamped; export clamps)."""
    return denoise_trace(model, noisy, icfg)[0]
