"""Conventional image formation from RF channel data.

The pipeline is IQ demodulation, per-pixel time-of-flight correction into a
complex aperture vector, and one of three beamformers (delay-and-sum,
minimum variance, delay-multiply-and-sum). Images from several transmits are
compounded and log-compressed for display.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.signal import butter, hilbert, sosfiltfilt

from .core import NumericalError, RFDataCube, TransducerGeometry, TransmitScheme, ValidationError

METHODS = ("das", "mv", "dmas")
DEFAULT_F_NUMBER = 0.5
DEFAULT_SUBAPERTURE = 30
DEFAULT_LOADING = 1e-4


class EmptyImageError(ValidationError):
    """Raised when an image has no nonzero pixel to normalize by."""


@dataclass(frozen=True)
class PixelGrid:
    """Regular pixel grid; `origin` is the centre of pixel (0, 0) as ``(x, z)``."""

    nx: int
    nz: int
    origin: tuple
    spacing: tuple

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise ValidationError("pixel grid must be non-empty")
        if not (self.spacing[0] > 0 and self.spacing[1] > 0):
            raise ValidationError("pixel spacing must be positive")

    @classmethod
    def from_extent(cls, extent, dx: float, dz: float) -> "PixelGrid":
        """Grid covering ``(x_min, x_max, z_min, z_max)`` with pixel centres on the edges."""
        x0, x1, z0, z1 = extent
        nx = int(np.floor((x1 - x0) / dx + 1e-9)) + 1
        nz = int(np.floor((z1 - z0) / dz + 1e-9)) + 1
        return cls(nx, nz, (x0, z0), (dx, dz))

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.spacing[0] * np.arange(self.nx)

    @property
    def z(self) -> np.ndarray:
        return self.origin[1] + self.spacing[1] * np.arange(self.nz)

    @property
    def shape(self) -> tuple:
        return (self.nz, self.nx)

    def positions(self) -> np.ndarray:
        """`(2, nz * nx)` pixel centres in row-major (z, x) order."""
        X, Z = np.meshgrid(self.x, self.z)
        return np.stack([X.ravel(), Z.ravel()])

    def extent(self) -> tuple:
        """Outer edges, suitable for matplotlib ``imshow``."""
        dx, dz = self.spacing
        return (self.x[0] - dx / 2, self.x[-1] + dx / 2, self.z[-1] + dz / 2, self.z[0] - dz / 2)

    def index_of(self, x: float, z: float) -> tuple:
        """Nearest pixel as ``(iz, ix)``."""
        ix = int(round((x - self.origin[0]) / self.spacing[0]))
        iz = int(round((z - self.origin[1]) / self.spacing[1]))
        return iz, ix


@dataclass(frozen=True, eq=False)
class IQCube:
    """Complex baseband samples of shape `(n_tx, n_ft, n_ch)`."""

    samples: np.ndarray
    carrier: float
    sampling_frequency: float
    initial_time: float = 0.0

    @property
    def shape(self):
        return self.samples.shape


def waveform_bandwidth(waveform, fs: float) -> float:
    """Width of the band where the spectrum is within 6 dB of its peak."""
    w = np.asarray(waveform, dtype=float)
    n = max(4096, 1 << int(np.ceil(np.log2(w.size))))
    spec = np.abs(np.fft.rfft(w, n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    band = f[spec >= spec.max() / 2]
    return float(band.max() - band.min())


def envelope_peak_time(waveform, fs: float) -> float:
    """Time of the envelope maximum, relative to the first sample."""
    env = np.abs(hilbert(np.asarray(waveform, dtype=float)))
    return float(np.argmax(env)) / fs


def iq_demodulate(rf: RFDataCube, f_c: float, f_s: float, filter_order: int = 5,
                  bandwidth: float | None = None, initial_time: float = 0.0) -> IQCube:
    """Analytic signal, mixed to baseband and low-pass filtered.

    Args:
        rf: RF data.
        f_c: carrier to remove.
        f_s: sampling frequency.
        filter_order: Butterworth order.
        bandwidth: two-sided passband width; the low-pass cutoff is half of it.
            Defaults to `f_c`.
        initial_time: time of the first sample, sets the mixing phase.
    """
    if not f_s > 2 * f_c:
        raise ValidationError("sampling frequency must exceed twice the carrier")
    x = np.asarray(rf.samples if isinstance(rf, RFDataCube) else rf, dtype=float)
    n_ft = x.shape[1]
    t = initial_time + np.arange(n_ft) / f_s
    bb = hilbert(x, axis=1) * np.exp(-2j * np.pi * f_c * t)[None, :, None]
    bw = f_c if bandwidth is None else bandwidth
    wn = min(bw / 2 / (f_s / 2), 0.99)
    sos = butter(filter_order, wn, output="sos")
    padlen = min(3 * (2 * len(sos) + 1), n_ft - 1)
    out = sosfiltfilt(sos, bb.real, axis=1, padlen=padlen) + 1j * sosfiltfilt(sos, bb.imag, axis=1, padlen=padlen)
    return IQCube(out, f_c, f_s, initial_time)


def _window(dx, half_width, kind):
    if kind == "rect":
        return np.ones_like(dx)
    if kind == "hann":
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(np.isfinite(half_width) & (half_width > 0), dx / half_width, 0.0)
        return 0.5 * (1.0 + np.cos(np.pi * np.clip(r, -1, 1)))
    raise ValidationError(f"unknown apodization window {kind!r}")


def pixel_delays(pixels, geometry: TransducerGeometry, scheme: TransmitScheme, c: float, tx: int = 0,
                 lens_delay: float = 0.0, peak_time: float | None = None) -> np.ndarray:
    """Echo time of each pixel on each channel, shape `(n_pix, n_ch)`.

    Transmit side: earliest arrival over the firing elements including their
    delays. `peak_time` defaults to the envelope peak of the transmit pulse.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(2, -1)
    if peak_time is None:
        peak_time = envelope_peak_time(scheme.waveforms[tx], scheme.waveform_fs)
    ex, ez = geometry.element_positions
    fire = scheme.firing(tx)
    d_tx = np.hypot(pixels[0][:, None] - ex[fire], pixels[1][:, None] - ez[fire])
    tau_tx = np.min(d_tx / c + scheme.delays[tx, fire], axis=1)
    tau_rx = np.hypot(ex[None, :] - pixels[0][:, None], pixels[1][:, None] - ez[None, :]) / c
    return tau_tx[:, None] + tau_rx + lens_delay + peak_time


def apertures(iq: IQCube, pixels, geometry: TransducerGeometry, scheme: TransmitScheme, c: float,
              tx: int = 0, f_number: float = DEFAULT_F_NUMBER, window: str = "rect",
              lens_delay: float = 0.0, peak_time: float | None = None) -> np.ndarray:
    """TOF-corrected aperture vectors for many pixels, shape `(n_pix, n_ch)`.

    The total delay per channel is the earliest arrival over the firing
    elements, plus the receive travel time, the lens delay and the time of the
    pulse envelope peak. Samples outside the recording are zero. Channels
    with ``|x_e - x_p| > z_p / (2 f_number)`` are zeroed; a `f_number` of
    None or 0 keeps every channel.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(2, -1)
    tau = pixel_delays(pixels, geometry, scheme, c, tx, lens_delay, peak_time)
    dx = geometry.element_positions[0][None, :] - pixels[0][:, None]
    pos = (tau - iq.initial_time) * iq.sampling_frequency
    n_ft = iq.samples.shape[1]
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    valid = (i0 >= 0) & (i0 < n_ft - 1)
    i0c = np.clip(i0, 0, n_ft - 2)
    data = iq.samples[tx]
    ch = np.arange(geometry.n_ch)[None, :]
    u = (1 - frac) * data[i0c, ch] + frac * data[i0c + 1, ch]
    u = np.where(valid, u, 0.0) * np.exp(2j * np.pi * iq.carrier * tau)
    if not f_number:
        half = np.full_like(dx, np.inf)
    else:
        half = np.broadcast_to(pixels[1][:, None] / (2 * f_number), dx.shape)
    inside = np.abs(dx) <= half
    return np.where(inside, u * _window(dx, half, window), 0.0)


def tof_correct(iq: IQCube, pixel, geometry: TransducerGeometry, scheme: TransmitScheme, c: float,
                f_number: float = DEFAULT_F_NUMBER, apodization_window: str = "rect", tx: int = 0,
                lens_delay: float = 0.0, peak_time: float | None = None) -> np.ndarray:
    """Aperture vector of length `n_ch` for one pixel ``(x, z)``."""
    return apertures(iq, np.reshape(pixel, (2, 1)), geometry, scheme, c, tx, f_number,
                     apodization_window, lens_delay, peak_time)[0]


def das(u) -> complex:
    return np.sum(u, axis=-1)


def _mv_batch(U, L, delta, force_identity):
    U = np.asarray(U, dtype=complex)
    n = U.shape[-1]
    if not 1 <= L <= n:
        raise ValidationError("subaperture length must lie in [1, n_ch]")
    k = n - L + 1
    sub = np.lib.stride_tricks.sliding_window_view(U, L, axis=-1)  # (P, k, L)
    if force_identity:
        R = np.broadcast_to(np.eye(L, dtype=complex), U.shape[:-1] + (L, L)).copy()
    else:
        R = np.einsum("pki,pkj->pij", sub, sub.conj()) / k
        tr = np.real(np.trace(R, axis1=-2, axis2=-1))
        R = R + (delta * tr / L)[:, None, None] * np.eye(L)
    a = np.ones(L, dtype=complex)
    cond = np.linalg.cond(R)
    if not np.all(np.isfinite(cond)) or np.any(cond > 1e12):
        raise NumericalError("ill-conditioned aperture")
    x = np.linalg.solve(R, np.broadcast_to(a, R.shape[:-1])[..., None])[..., 0]
    w = x / np.sum(x, axis=-1, keepdims=True)  # a^H x with a = ones
    z = np.einsum("pi,pki->p", w.conj(), sub) / k
    return z, w


def mv(u, L: int | None = None, diagonal_loading: float = DEFAULT_LOADING,
       force_identity: bool = False, return_weights: bool = False):
    """Minimum variance beamformer with spatial smoothing.

    Args:
        u: aperture vector.
        L: subaperture length, default ``min(30, n_ch // 2)`` (at least 1).
        diagonal_loading: loading factor, scaled by ``trace(R) / L``.
        force_identity: replace the covariance by the identity (test hook).
        return_weights: also return the weight vector.

    Raises:
        NumericalError: the loaded covariance is singular.
    """
    u = np.asarray(u, dtype=complex)
    if L is None:
        L = max(1, min(DEFAULT_SUBAPERTURE, u.size // 2))
    z, w = _mv_batch(u[None, :], L, diagonal_loading, force_identity)
    return (z[0], w[0]) if return_weights else z[0]


def dmas(u) -> complex:
    """Signed-root pair products summed over all pairs ``n < m``."""
    u = np.asarray(u, dtype=complex)
    mag = np.abs(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(mag > 0, u / np.sqrt(mag), 0.0)
    total = np.sum(s, axis=-1)
    return (total * total - np.sum(s * s, axis=-1)) / 2


def beamform_image(iq: IQCube, grid: PixelGrid, geometry: TransducerGeometry, scheme: TransmitScheme,
                   c: float, method: str = "das", f_number: float = DEFAULT_F_NUMBER,
                   window: str = "rect", subaperture: int | None = None,
                   diagonal_loading: float = DEFAULT_LOADING, lens_delay: float = 0.0) -> np.ndarray:
    """Complex image per transmit, shape `(n_tx, nz, nx)`."""
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}")
    pix = grid.positions()
    out = np.zeros((scheme.n_tx, pix.shape[1]), dtype=complex)
    for tx in range(scheme.n_tx):
        U = apertures(iq, pix, geometry, scheme, c, tx, f_number, window, lens_delay)
        if method == "das":
            out[tx] = das(U)
        elif method == "dmas":
            out[tx] = dmas(U)
        else:
            live = np.any(U != 0, axis=1)
            if np.any(live):
                L = min(subaperture, geometry.n_ch) if subaperture else max(1, min(DEFAULT_SUBAPERTURE, geometry.n_ch // 2))
                out[tx, live] = _mv_batch(U[live], L, diagonal_loading, False)[0]
    return out.reshape(scheme.n_tx, grid.nz, grid.nx)


def log_compress(magnitude, dynamic_range_db: float = 60.0) -> np.ndarray:
    """Peak-normalized dB image clamped to ``[-dynamic_range_db, 0]``."""
    mag = np.abs(np.asarray(magnitude))
    peak = mag.max() if mag.size else 0.0
    if not peak > 0:
        raise EmptyImageError("empty image: no nonzero pixel")
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag / peak)
    return np.clip(db, -dynamic_range_db, 0.0)


def compound_and_compress(images, dynamic_range_db: float = 60.0, coherent: bool = True) -> np.ndarray:
    """Mean over transmits (complex or magnitude), then `log_compress`."""
    images = np.asarray(images)
    if images.ndim < 3 or images.shape[0] < 1:
        raise ValidationError("need at least one image")
    mag = np.abs(images.mean(axis=0)) if coherent else np.abs(images).mean(axis=0)
    return log_compress(mag, dynamic_range_db)


def image_peak(image, grid: PixelGrid) -> tuple:
    """Position ``(x, z)`` of the largest pixel."""
    iz, ix = np.unravel_index(np.argmax(np.asarray(image)), grid.shape)
    return float(grid.x[ix]), float(grid.z[iz])


def detect_peaks(image, grid: PixelGrid, n: int, min_distance: float = 0.0) -> np.ndarray:
    """Positions `(2, k)` of up to `n` positive local maxima, strongest first.

    A maximum closer than `min_distance` to a stronger accepted one is skipped.
    """
    img = np.asarray(image, dtype=float)
    footprint = np.ones((3, 3), dtype=bool)
    is_max = (img == maximum_filter(img, footprint=footprint, mode="constant", cval=-np.inf)) & (img > 0)
    iz, ix = np.nonzero(is_max)
    order = np.argsort(img[iz, ix], kind="stable")[::-1]
    pts = []
    for k in order:
        p = (grid.x[ix[k]], grid.z[iz[k]])
        if all(np.hypot(p[0] - q[0], p[1] - q[1]) >= min_distance for q in pts):
            pts.append(p)
            if len(pts) == n:
                break
    return np.array(pts, dtype=float).reshape(-1, 2).T
