"""Classical single-image denoisers used as comparison baselines.

All of them act directly on pixel-domain noisy images.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from ..errors import CapabilityError, ConfigError
from ..imaging import psnr
from .bm3d import BM3DParams, bm3d, bm3d_array
from .nlm import nlm, nlm_array
from .tv import total_variation, tv_chambolle, tv_chambolle_array
from .wavelet import estimate_noise_sigma, wavelet_bayes_shrink, wavelet_bayes_shrink_array

log = logging.getLogger(__name__)

BASELINE_NAMES = ("TV", "Wavelet", "NLM", "BM3D")


@dataclass(frozen=True)
class TVParams:
    weight: float = 20.0
    max_iter: int = 200
    tol: float = 1e-4


@dataclass(frozen=True)
class WaveletParams:
    family: str = "db4"
    levels: Optional[int] = None  # None: min(3, deepest feasible)
    threshold_scale: float = 1.0


@dataclass(frozen=True)
class NLMParams:
    patch_radius: int = 1
    search_radius: int = 5
    h: float = 30.0


@dataclass(frozen=True)
class BM3DSettings:
    sigma_est: float = 30.0
    enabled: bool = True


# Search grids for validation tuning; each maps a field name to candidate values.
DEFAULT_GRIDS = {
    "TV": {"weight": [5.0, 10.0, 20.0, 30.0, 45.0, 60.0, 80.0]},
    "Wavelet": {"levels": [2, 3, 4], "threshold_scale": [0.5, 1.0, 1.5, 2.0, 3.0]},
    "NLM": {"h": [10.0, 20.0, 30.0, 45.0, 60.0, 80.0, 100.0, 130.0]},
    "BM3D": {"sigma_est": [15.0, 25.0, 35.0, 50.0, 70.0, 90.0, 120.0]},
}


@dataclass(frozen=True)
class BaselineParams:
    tv: TVParams = field(default_factory=TVParams)
    wavelet: WaveletParams = field(default_factory=WaveletParams)
    nlm: NLMParams = field(default_factory=NLMParams)
    bm3d: BM3DSettings = field(default_factory=BM3DSettings)

    def __post_init__(self):
        if not (self.tv.weight > 0 and self.tv.max_iter > 0 and self.tv.tol > 0):
            raise ConfigError("TV parameters must be positive")
        if (self.wavelet.levels is not None and self.wavelet.levels < 1) or self.wavelet.threshold_scale < 0:
            raise ConfigError("wavelet levels must be >= 1 and threshold_scale >= 0")
        if self.nlm.patch_radius < 1 or self.nlm.search_radius < 1 or not self.nlm.h > 0:
            raise ConfigError("NLM radii must be >= 1 and h positive")
        if not self.bm3d.sigma_est > 0:
            raise ConfigError("BM3D sigma_est must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineParams":
        d = d or {}
        return cls(
            TVParams(**d.get("tv", {})),
            WaveletParams(**d.get("wavelet", {})),
            NLMParams(**d.get("nlm", {})),
            BM3DSettings(**d.get("bm3d", {})),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def enabled_methods(self) -> tuple:
        return tuple(m for m in BASELINE_NAMES if m != "BM3D" or self.bm3d.enabled)


def run_baseline(name: str, arr: np.ndarray, params: BaselineParams) -> np.ndarray:
    """Apply one named baseline to a 2-D array."""
    if name == "TV":
        return tv_chambolle_array(arr, params.tv.weight, params.tv.max_iter, params.tv.tol)[0]
    if name == "Wavelet":
        w = params.wavelet
        return wavelet_bayes_shrink_array(arr, w.family, w.levels, w.threshold_scale)
    if name == "NLM":
        n = params.nlm
        return nlm_array(arr, n.patch_radius, n.search_radius, n.h)
    if name == "BM3D":
        if not params.bm3d.enabled:
            raise CapabilityError("BM3D is disabled in this configuration")
        return bm3d_array(arr, params.bm3d.sigma_est)
    raise ConfigError(f"unknown baseline {name!r}")


_SECTION = {"TV": "tv", "Wavelet": "wavelet", "NLM": "nlm", "BM3D": "bm3d"}


def _grid_points(grid: dict):
    keys = sorted(grid)
    points = [{}]
    for k in keys:
        points = [dict(p, **{k: v}) for p in points for v in grid[k]]
    return points


def tune_baselines(pairs, params: BaselineParams, grids=None, methods=None):
    """Grid-search each baseline's parameters for maximal mean PSNR on ``pairs``.

    ``pairs`` is a sequence of ``(noisy, clean)`` 2-D arrays (validation
    split). Returns ``(tuned_params, scores)`` where ``scores[method]`` lists
    ``(setting, mean_psnr)`` for every grid point. Ties keep the earlier point.
    """
    grids = DEFAULT_GRIDS if grids is None else grids
    methods = params.enabled_methods() if methods is None else methods
    tuned = params
    scores = {}
    for m in methods:
        section = _SECTION[m]
        results = []
        best = None
        for point in _grid_points(grids.get(m, {})):
            trial = replace(tuned, **{section: replace(getattr(tuned, section), **point)})
            try:
                vals = [psnr(clean, np.clip(run_baseline(m, noisy, trial), 0, 255)) for noisy, clean in pairs]
            except ConfigError:
                # e.g. more wavelet levels than the patch size allows
                continue
            score = float(np.mean(vals))
            results.append((point, score))
            if best is None or score > best[1]:
                best = (trial, score)
        if best is not None:
            tuned = best[0]
            log.info("tuned %s: %s (val PSNR %.2f dB)", m, getattr(tuned, section), best[1])
        scores[m] = results
    return tuned, scores


__all__ = [
    "BASELINE_NAMES", "BaselineParams", "TVParams", "WaveletParams", "NLMParams", "BM3DSettings",
    "BM3DParams", "DEFAULT_GRIDS", "run_baseline", "tune_baselines",
    "tv_chambolle", "tv_chambolle_array", "total_variation",
    "wavelet_bayes_shrink", "wavelet_bayes_shrink_array", "estimate_noise_sigma",
    "nlm", "nlm_array", "bm3d", "bm3d_array",
]
