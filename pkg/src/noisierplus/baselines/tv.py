"""Total-variation (ROF) denoising by Chambolle's dual projection algorithm."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..imaging import ImagePlane


def _grad(u):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    return gx, gy


def _div(px, py):
    # Negative adjoint of _grad.
    d = np.zeros_like(px)
    d[:, 0] = px[:, 0]
    d[:, 1:-1] = px[:, 1:-1] - px[:, :-2]
    d[:, -1] = -px[:, -2] if px.shape[1] > 1 else 0.0
    dy = np.zeros_like(py)
    dy[0, :] = py[0, :]
    dy[1:-1, :] = py[1:-1, :] - py[:-2, :]
    dy[-1, :] = -py[-2, :] if py.shape[0] > 1 else 0.0
    return d + dy


def total_variation(img) -> float:
    """Isotropic total variation with forward differences."""
    u = img.data if isinstance(img, ImagePlane) else np.asarray(img, dtype=np.float64)
    gx, gy = _grad(u)
    return float(np.sum(np.sqrt(gx**2 + gy**2)))


def tv_chambolle_array(f: np.ndarray, weight: float, max_iter: int = 200, tol: float = 1e-4, tau: float = 0.25):
    """Solve ``min_u ||u - f||^2 / (2 weight) + TV(u)``.

    Returns ``(u, converged, iterations)``. Convergence is declared when the
    relative L2 change of the dual field drops below ``tol``.
    """
    if not weight > 0:
        raise ConfigError(f"TV weight must be positive, got {weight}")
    f = np.asarray(f, dtype=np.float64)
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gx, gy = _grad(_div(px, py) - f / weight)
        norm = 1.0 + tau * np.sqrt(gx**2 + gy**2)
        nx = (px + tau * gx) / norm
        ny = (py + tau * gy) / norm
        change = np.sqrt(np.sum((nx - px) ** 2 + (ny - py) ** 2))
        scale = np.sqrt(np.sum(nx**2 + ny**2))
        px, py = nx, ny
        if change <= tol * max(scale, 1e-300):
            converged = True
            break
    return f - weight * _div(px, py), converged, it


def tv_chambolle(img: ImagePlane, weight: float, max_iter: int = 200, tol: float = 1e-4) -> ImagePlane:
    u, converged, it = tv_chambolle_array(img.data, weight, max_iter, tol)
    return img.with_data(u, tv_converged=converged, tv_iterations=it)
