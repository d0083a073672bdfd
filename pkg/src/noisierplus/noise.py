"""Seeded noise synthesis: noisier/noisier+ triples, gamma speckle, and the
conditional-expectation probe for the Z -> Y training target."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, DomainError
from .imaging import Domain, ImagePlane

# XOR-ed into the NoiseSpec seed to give the second Gaussian stream its own seed.
M2_SEED_XOR = 0x9E3779B97F4A7C15
_U64 = (1 << 64) - 1


def derive_m2_seed(seed: int) -> int:
    return (int(seed) ^ M2_SEED_XOR) & _U64


@dataclass(frozen=True)
class NoiseSpec:
    sigma1: float = 50.0
    sigma2: float = 50.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma1", "sigma2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and nonnegative, got {v}")
        if not 0 <= int(self.seed) <= _U64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    def with_seed(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(self.sigma1, self.sigma2, int(seed) & _U64)


@dataclass(frozen=True)
class SpeckleSpec:
    shape: float = 4.0
    scale: Optional[float] = None  # None means 1/shape, i.e. unit mean
    seed: int = 0

    def __post_init__(self):
        if not self.shape > 0:
            raise ConfigError(f"speckle shape must be positive, got {self.shape}")
        if self.scale is not None and not self.scale > 0:
            raise ConfigError(f"speckle scale must be positive, got {self.scale}")

    @property
    def effective_scale(self) -> float:
        return 1.0 / self.shape if self.scale is None else self.scale


@dataclass(frozen=True)
class NoisyTriple:
    """Aligned (real-noisy, noisier, noisier+) patches in the rescaled Anscombe domain.

    ``m1``/``m2`` are the drawn noise fields, kept only when requested.
    """

    x_ans: ImagePlane
    y_noisier: ImagePlane
    z_noisier_plus: ImagePlane
    m1: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    m2: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        shapes = {self.x_ans.shape, self.y_noisier.shape, self.z_noisier_plus.shape}
        if len(shapes) != 1:
            raise DomainError(f"triple members differ in shape: {sorted(shapes)}")


def _gaussian_field(shape, sigma: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(int(seed) & _U64)
    return rng.normal(0.0, 1.0, size=shape) * sigma


def add_gaussian(img: ImagePlane, sigma: float, seed: int) -> ImagePlane:
    """Return ``img`` plus i.i.d. N(0, sigma^2) noise, keeping the domain tag."""
    if not sigma >= 0:
        raise ConfigError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return img.with_data(img.data)
    return img.with_data(img.data + _gaussian_field(img.shape, sigma, seed))


def make_noisy_triple(x_ans: ImagePlane, spec: NoiseSpec, keep_noise: bool = False) -> NoisyTriple:
    """Build ``y = x + M1`` and ``z = y + M2`` from one real-noisy patch."""
    if x_ans.domain is not Domain.ANSCOMBE_RESCALED:
        raise DomainError(f"make_noisy_triple expects an anscombe-rescaled patch, got {x_ans.domain.value!r}")
    m1 = _gaussian_field(x_ans.shape, spec.sigma1, spec.seed)
    m2 = _gaussian_field(x_ans.shape, spec.sigma2, derive_m2_seed(spec.seed))
    y = x_ans.data + m1
    z = y + m2
    return NoisyTriple(
        x_ans,
        x_ans.with_data(y),
        x_ans.with_data(z),
        m1 if keep_noise else None,
        m2 if keep_noise else None,
    )


def speckle_field(shape, spec: SpeckleSpec) -> np.ndarray:
    """Unit-mean multiplicative Gamma field of the given shape."""
    scale = spec.effective_scale
    rng = np.random.default_rng(int(spec.seed) & _U64)
    g = rng.gamma(spec.shape, scale, size=shape)
    return g / (spec.shape * scale)


def apply_speckle(clean: ImagePlane, spec: SpeckleSpec) -> ImagePlane:
    if clean.domain is not Domain.PIXEL:
        raise DomainError("apply_speckle expects a pixel-domain image")
    if np.any(clean.data < 0):
        raise DomainError("apply_speckle needs nonnegative samples")
    return clean.with_data(clean.data * speckle_field(clean.shape, spec))


# --------------------------------------------------------------------------
# Conditional-expectation probe
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformPixelPrior:
    lo: float = 0.0
    hi: float = 255.0

    def sample(self, rng, n):
        return rng.uniform(self.lo, self.hi, size=n)


@dataclass(frozen=True)
class GaussianScalarPrior:
    mu0: float = 128.0
    sigma0: float = 40.0

    def sample(self, rng, n):
        return rng.normal(self.mu0, self.sigma0, size=n)


Prior = Union[UniformPixelPrior, GaussianScalarPrior]

MIN_RELIABLE_COUNT = 100


@dataclass
class ProbeReport:
    bin_centers: np.ndarray
    mean_z: np.ndarray
    counts: np.ndarray
    e_y_given_z: np.ndarray
    e_x_given_z: np.ndarray
    e_m1_given_z: np.ndarray
    stderr: np.ndarray
    reliable: np.ndarray
    closed_form_m1: Optional[np.ndarray] = None

    @property
    def identity_residual(self) -> np.ndarray:
        return self.e_y_given_z - self.e_x_given_z - self.e_m1_given_z

    def identity_holds(self, n_se: float = 4.0) -> bool:
        r = self.reliable
        # The identity is exact per sample, so only rounding separates the sides.
        tol = n_se * self.stderr[r] + 1e-9 * (1.0 + np.abs(self.e_y_given_z[r]))
        return bool(np.all(np.abs(self.identity_residual[r]) <= tol))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_center", "n", "E_y", "E_x", "E_m1", "stderr"])
            for row in zip(self.bin_centers, self.counts, self.e_y_given_z,
                           self.e_x_given_z, self.e_m1_given_z, self.stderr):
                w.writerow([repr(float(row[0])), int(row[1])] + [repr(float(v)) for v in row[2:]])
        return path


def conditional_expectation_probe(prior: Prior, spec: NoiseSpec, n_samples: int = 1_000_000,
                                  n_bins: int = 40) -> ProbeReport:
    """Monte-Carlo estimate of E[Y|Z], E[X|Z] and E[M1|Z] on scalars.

    ``x ~ prior``, ``y = x + M1``, ``z = y + M2``. Samples are binned on ``z``
    over its central 99.8% range with equal-width bins. Bins with fewer than
    100 samples are kept but marked unreliable.
    """
    if n_samples < 100_000:
        raise ConfigError("n_samples must be at least 1e5")
    if n_bins < 10:
        raise ConfigError("n_bins must be at least 10")
    rng = np.random.default_rng(spec.seed)
    x = prior.sample(rng, n_samples)
    m1 = rng.normal(0.0, 1.0, n_samples) * spec.sigma1
    m2 = rng.normal(0.0, 1.0, n_samples) * spec.sigma2
    y = x + m1
    z = y + m2

    lo, hi = np.quantile(z, [0.001, 0.999])
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.digitize(z, edges) - 1, 0, n_bins - 1)
    inside = (z >= lo) & (z <= hi)
    idx, zi, xi, yi, mi = idx[inside], z[inside], x[inside], y[inside], m1[inside]

    counts = np.bincount(idx, minlength=n_bins)
    safe = np.maximum(counts, 1)

    def bin_mean(v):
        return np.bincount(idx, weights=v, minlength=n_bins) / safe

    e_m1 = bin_mean(mi)
    var_m1 = np.maximum(bin_mean(mi * mi) - e_m1**2, 0.0)
    stderr = np.sqrt(var_m1 / safe)
    mean_z = bin_mean(zi)

    closed = None
    if isinstance(prior, GaussianScalarPrior):
        total = prior.sigma0**2 + spec.sigma1**2 + spec.sigma2**2
        closed = spec.sigma1**2 * (mean_z - prior.mu0) / total

    return ProbeReport(
        bin_centers=0.5 * (edges[:-1] + edges[1:]),
        mean_z=mean_z,
        counts=counts,
        e_y_given_z=bin_mean(yi),
        e_x_given_z=bin_mean(xi),
        e_m1_given_z=e_m1,
        stderr=stderr,
        reliable=counts >= MIN_RELIABLE_COUNT,
        closed_form_m1=closed,
    )
