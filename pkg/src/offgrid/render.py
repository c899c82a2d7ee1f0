"""Pixel images from off-grid scatterers by Gaussian kernel density estimation."""

from __future__ import annotations

import numpy as np

from .beamform import PixelGrid
from .core import ScattererField, ValidationError


def default_radius(c: float, center_frequency: float) -> float:
    """Half a wavelength."""
    return 0.5 * c / center_frequency


def kde_image(field: ScattererField, grid: PixelGrid, r: float, weight_by_amplitude: bool = True) -> np.ndarray:
    """``I(p) = sum_i w_i exp(-|p - p_i|^2 / r^2)`` on the grid, shape `(nz, nx)`.

    `w_i` is the amplitude, or 1 with `weight_by_amplitude` off. The kernel is
    separable, so the image is one matrix product.
    """
    if not r > 0:
        raise ValidationError("kernel radius must be positive")
    px, pz = field.positions
    w = field.amplitudes if weight_by_amplitude else np.ones(field.n_sc)
    gx = np.exp(-((grid.x[:, None] - px[None, :]) / r) ** 2)
    gz = np.exp(-((grid.z[:, None] - pz[None, :]) / r) ** 2)
    return (gz * w[None, :]) @ gx.T
