"""Self-supervised speckle denoising from a single noisy observation per image."""

__version__ = "0.1.0"
