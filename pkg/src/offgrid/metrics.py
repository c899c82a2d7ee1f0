"""Image- and RF-domain quality measures."""

from __future__ import annotations

import numpy as np

from .beamform import (DEFAULT_F_NUMBER, PixelGrid, beamform_image, iq_demodulate, log_compress,
                       waveform_bandwidth)
from .core import RFDataCube, TransducerGeometry, TransmitScheme, ValidationError

GCNR_BINS = 256


def gcnr_values(a, b, bins: int = GCNR_BINS) -> float:
    """Generalized contrast-to-noise ratio of two samples of intensities.

    Both histograms share `bins` equal bins over the joint ``[min, max]``.
    The overlap is accumulated in integer counts, so identical samples give
    exactly 0 and disjoint supports exactly 1.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValidationError("regions must be non-empty")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    ca, _ = np.histogram(a, bins=bins, range=(lo, hi))
    cb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    na, nb = a.size, b.size
    overlap = int(np.sum(np.minimum(ca.astype(np.int64) * nb, cb.astype(np.int64) * na)))
    return (na * nb - overlap) / (na * nb)


def gcnr(image, region_a, region_b, bins: int = GCNR_BINS) -> float:
    """gCNR between two disjoint boolean masks of `image`.

    Raises:
        ValidationError: a mask is empty, masks overlap or shapes differ.
    """
    image = np.asarray(image)
    ma = np.asarray(region_a, dtype=bool)
    mb = np.asarray(region_b, dtype=bool)
    if ma.shape != image.shape or mb.shape != image.shape:
        raise ValidationError("region masks must match the image shape")
    if not ma.any() or not mb.any():
        raise ValidationError("regions must be non-empty")
    if np.any(ma & mb):
        raise ValidationError("regions overlap")
    return gcnr_values(image[ma], image[mb], bins)


def disk_mask(grid: PixelGrid, x: float, z: float, radius: float) -> np.ndarray:
    X, Z = np.meshgrid(grid.x, grid.z)
    return (X - x) ** 2 + (Z - z) ** 2 <= radius ** 2


def annulus_mask(grid: PixelGrid, x: float, z: float, r_in: float, r_out: float) -> np.ndarray:
    return disk_mask(grid, x, z, r_out) & ~disk_mask(grid, x, z, r_in)


def _samples(cube):
    return np.asarray(cube.samples if isinstance(cube, RFDataCube) else cube, dtype=float)


def rf_mse(observed, predicted) -> float:
    """Mean squared difference over the whole cube."""
    a, b = _samples(observed), _samples(predicted)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def das_magnitude(rf, geometry: TransducerGeometry, scheme: TransmitScheme, c: float, grid: PixelGrid,
                  f_number: float = DEFAULT_F_NUMBER, coherent: bool = True) -> np.ndarray:
    """Compounded DAS magnitude (linear scale) of RF data."""
    bw = waveform_bandwidth(scheme.waveforms[0], scheme.waveform_fs)
    iq = iq_demodulate(_samples(rf), geometry.center_frequency, geometry.sampling_frequency,
                       bandwidth=bw, initial_time=scheme.initial_time)
    img = beamform_image(iq, grid, geometry, scheme, c, "das", f_number=f_number)
    return np.abs(img.mean(axis=0)) if coherent else np.abs(img).mean(axis=0)


def residual_image(observed, predicted, geometry: TransducerGeometry, scheme: TransmitScheme, c: float,
                   grid: PixelGrid, dynamic_range_db: float = 60.0, f_number: float = DEFAULT_F_NUMBER,
                   reference=None) -> np.ndarray:
    """DAS image of ``observed - predicted`` in dB.

    Normalized to its own peak, or to the DAS peak of `reference` RF data when
    given. An exact fit raises `EmptyImageError`.
    """
    a, b = _samples(observed), _samples(predicted)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    mag = das_magnitude(a - b, geometry, scheme, c, grid, f_number)
    if reference is None:
        return log_compress(mag, dynamic_range_db)
    peak = das_magnitude(reference, geometry, scheme, c, grid, f_number).max()
    if not mag.max() > 0:
        return log_compress(mag, dynamic_range_db)
    with np.errstate(divide="ignore"):
        return np.clip(20 * np.log10(mag / peak), -dynamic_range_db, None)
