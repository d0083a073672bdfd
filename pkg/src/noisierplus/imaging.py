"""Image container, Anscombe transforms, affine rescaling and quality metrics.

All arithmetic here is float64. Samples are stored row-major as a 2-D
``(height, width)`` array.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from .errors import DomainError

__all__ = [
    "Domain",
    "ImagePlane",
    "ValueRange",
    "MetricPair",
    "InverseMode",
    "PIXEL_RANGE",
    "ANSCOMBE_RANGE",
    "anscombe_forward",
    "anscombe_inverse",
    "affine_rescale",
    "to_rescaled",
    "from_rescaled",
    "psnr",
    "ssim",
    "metric_pair",
]


class Domain(str, enum.Enum):
    PIXEL = "pixel"
    ANSCOMBE = "anscombe"
    ANSCOMBE_RESCALED = "anscombe-rescaled"
    ARBITRARY = "arbitrary"


class InverseMode(str, enum.Enum):
    ALGEBRAIC = "algebraic"
    ASYMPTOTIC = "asymptotic"
    CLOSED_FORM_UNBIASED = "closed-form-unbiased"


@dataclass(frozen=True)
class ValueRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise DomainError(f"range bounds must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise DomainError(f"degenerate range [{self.lo}, {self.hi}]")

    @property
    def span(self) -> float:
        return self.hi - self.lo

    def as_list(self) -> list[float]:
        return [self.lo, self.hi]


PIXEL_RANGE = ValueRange(0.0, 255.0)
ANSCOMBE_RANGE = ValueRange(2.0 * math.sqrt(3.0 / 8.0), 2.0 * math.sqrt(255.0 + 3.0 / 8.0))


@dataclass(frozen=True)
class ImagePlane:
    """Single-channel float64 image tagged with its value domain.

    ``meta`` carries sidecar information (e.g. the affine map that produced an
    ``ANSCOMBE_RESCALED`` image); it never alters pixel data.
    """

    data: np.ndarray
    domain: Domain = Domain.ARBITRARY
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise DomainError(f"expected a 2-D image, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError(f"image must be at least 1x1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise DomainError(f"non-finite sample at pixel index {bad}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data, domain: Domain | None = None, **meta) -> "ImagePlane":
        new_meta = dict(self.meta)
        new_meta.update(meta)
        return ImagePlane(data, self.domain if domain is None else domain, new_meta)

    def crop(self, row: int, col: int, size: int) -> "ImagePlane":
        return ImagePlane(self.data[row:row + size, col:col + size], self.domain, dict(self.meta))


@dataclass(frozen=True)
class MetricPair:
    psnr_db: float
    ssim: float

    @property
    def psnr_is_infinite(self) -> bool:
        return math.isinf(self.psnr_db)


ImageLike = Union[ImagePlane, np.ndarray]


def _as_array(img: ImageLike) -> np.ndarray:
    if isinstance(img, ImagePlane):
        return img.data
    return np.asarray(img, dtype=np.float64)


def _require_domain(img: ImagePlane, expected: Domain, op: str) -> None:
    if img.domain is not expected:
        raise DomainError(f"{op} expects domain {expected.value!r}, got {img.domain.value!r}")


def anscombe_forward(img: ImagePlane) -> ImagePlane:
    """Variance-stabilizing map ``2 * sqrt(x + 3/8)`` for pixel-domain images."""
    _require_domain(img, Domain.PIXEL, "anscombe_forward")
    x = img.data
    if np.any(x < 0):
        idx = int(np.flatnonzero(x < 0)[0])
        raise DomainError(f"negative sample {x.flat[idx]} at pixel index {idx}")
    return ImagePlane(2.0 * np.sqrt(x + 3.0 / 8.0), Domain.ANSCOMBE, dict(img.meta))


def _inverse_array(y: np.ndarray, mode: InverseMode) -> np.ndarray:
    if mode is InverseMode.ALGEBRAIC:
        return (y / 2.0) ** 2 - 3.0 / 8.0
    if mode is InverseMode.ASYMPTOTIC:
        return (y / 2.0) ** 2 - 1.0 / 8.0
    if np.any(y <= 0):
        idx = int(np.flatnonzero(y <= 0)[0])
        raise DomainError(f"closed-form inverse needs positive samples; got {y.flat[idx]} at pixel index {idx}")
    s = math.sqrt(1.5)
    return (y / 2.0) ** 2 + 0.25 * s / y - 11.0 / 8.0 / y**2 + 5.0 / 8.0 * s / y**3 - 1.0 / 8.0


def anscombe_inverse(img: ImagePlane, mode: InverseMode | str = InverseMode.CLOSED_FORM_UNBIASED) -> ImagePlane:
    """Map an Anscombe-domain image back to pixel intensities.

    Parameters
    ----------
    img : ImagePlane
        Image in the ``ANSCOMBE`` domain.
    mode : InverseMode
        ``ALGEBRAIC`` is the exact functional inverse, ``ASYMPTOTIC`` and
        ``CLOSED_FORM_UNBIASED`` approximate the exact unbiased inverse
        for Poisson data (the latter is accurate down to low counts).

    Returns
    -------
    ImagePlane
        Pixel-domain image. No clamping is applied; export clamps.
    """
    _require_domain(img, Domain.ANSCOMBE, "anscombe_inverse")
    out = _inverse_array(img.data, InverseMode(mode))
    return ImagePlane(out, Domain.PIXEL, dict(img.meta))


def affine_rescale(img: ImagePlane, src: ValueRange, dst: ValueRange, domain: Domain | None = None) -> ImagePlane:
    """Affinely map ``src`` onto ``dst``; the map is recorded in ``meta['affine']``."""
    if not src.lo < src.hi:
        raise DomainError("degenerate source range")
    out = (img.data - src.lo) * (dst.span / src.span) + dst.lo
    meta = dict(img.meta)
    meta["affine"] = {"src": src.as_list(), "dst": dst.as_list()}
    return ImagePlane(out, img.domain if domain is None else domain, meta)


def to_rescaled(img: ImagePlane) -> ImagePlane:
    """Anscombe domain -> [0, 255]-scaled Anscombe domain."""
    _require_domain(img, Domain.ANSCOMBE, "to_rescaled")
    return affine_rescale(img, ANSCOMBE_RANGE, PIXEL_RANGE, Domain.ANSCOMBE_RESCALED)


def from_rescaled(img: ImagePlane) -> ImagePlane:
    _require_domain(img, Domain.ANSCOMBE_RESCALED, "from_rescaled")
    out = affine_rescale(img, PIXEL_RANGE, ANSCOMBE_RANGE, Domain.ANSCOMBE)
    out.meta.pop("affine", None)
    return out


def _check_pair(reference: ImageLike, test: ImageLike, max_val: float):
    a, b = _as_array(reference), _as_array(test)
    if a.shape != b.shape:
        raise DomainError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not max_val > 0:
        raise DomainError("max_val must be positive")
    return a, b


def psnr(reference: ImageLike, test: ImageLike, max_val: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    a, b = _check_pair(reference, test, max_val)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def ssim(reference: ImageLike, test: ImageLike, max_val: float = 255.0) -> float:
    """Structural similarity computed with the whole image as a single window."""
    a, b = _check_pair(reference, test, max_val)
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    var_a = float(np.mean(da * da))
    var_b = float(np.mean(db * db))
    cov = float(np.mean(da * db))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(num / den)


def metric_pair(reference: ImageLike, test: ImageLike, max_val: float = 255.0) -> MetricPair:
    return MetricPair(psnr(reference, test, max_val), ssim(reference, test, max_val))


def clamp_u8(data: Any) -> np.ndarray:
    """Clamp to [0, 255] and round half-to-even, as done on export."""
    return np.clip(np.round(np.asarray(data, dtype=np.float64)), 0, 255).astype(np.uint8)
