"""Desk-scale synthetic corpus: public-domain grayscale images with gamma speckle."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_image, write_manifest
from .imaging import Domain, ImagePlane
from .noise import SpeckleSpec, apply_speckle

# Bundled with scikit-image, no download needed; all public domain or CC0.
DEFAULT_IMAGES = ("camera", "coins", "moon", "page", "text", "clock")


def load_reference_image(name: str) -> np.ndarray:
    import skimage.data

    arr = getattr(skimage.data, name)()
    if arr.ndim != 2:
        raise ValueError(f"skimage.data.{name} is not grayscale")
    return arr.astype(np.float64)


def make_synthetic_corpus(out_dir, names=DEFAULT_IMAGES, speckle_shape: float = 4.0, seed: int = 0) -> Path:
    """Write ``clean/``, ``noisy/`` PNGs and ``manifest.txt`` under ``out_dir``.

    Each noisy image is the clean image times a unit-mean Gamma field,
    quantized to 8 bits like a real acquisition.
    """
    out_dir = Path(out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "noisy").mkdir(parents=True, exist_ok=True)
    entries = []
    for k, name in enumerate(names):
        clean = ImagePlane(load_reference_image(name), Domain.PIXEL)
        noisy = apply_speckle(clean, SpeckleSpec(shape=speckle_shape, seed=int(seed) * 1000 + k))
        write_image(clean, out_dir / "clean" / f"{name}.png")
        write_image(noisy, out_dir / "noisy" / f"{name}.png")
        entries.append((name, f"noisy/{name}.png", f"clean/{name}.png"))
    return write_manifest(out_dir / "manifest.txt", entries)
