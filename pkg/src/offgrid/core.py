"""Domain types shared by every module.

Shapes follow a fixed naming scheme:

| name   | meaning                          |
| ------ | -------------------------------- |
| `n_tx` | number of transmit events        |
| `n_ft` | number of fast-time samples      |
| `n_ch` | number of transducer elements    |
| `n_sc` | number of scatterers             |

Positions are stored as `(2, n)` arrays with rows `(x, z)`; `z` points into
the medium. All types are immutable after construction: their arrays are
copied and flagged read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Radius of the spherical scatterer model used by the spread attenuation.
SCATTERER_RADIUS = 1e-6


class ValidationError(ValueError):
    """Raised when inputs violate a structural invariant."""


class NumericalError(RuntimeError):
    """Raised when a numerical procedure fails (divergence, singularity)."""


def _frozen(a, dtype=np.float64, ndim=None):
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TransducerGeometry:
    """Linear array on the x-axis.

    Args:
        element_positions: `(2, n_ch)` element centres in meters.
        element_width: nominal element width in meters.
        center_frequency: carrier frequency in Hz.
        sampling_frequency: RF sampling frequency in Hz.
    """

    element_positions: np.ndarray
    element_width: float
    center_frequency: float
    sampling_frequency: float

    def __post_init__(self):
        object.__setattr__(self, "element_positions", _frozen(self.element_positions, ndim=2))
        if self.element_positions.shape[0] != 2:
            raise ValidationError("element_positions must have shape (2, n_ch)")
        object.__setattr__(self, "element_width", float(self.element_width))
        object.__setattr__(self, "center_frequency", float(self.center_frequency))
        object.__setattr__(self, "sampling_frequency", float(self.sampling_frequency))

    @property
    def n_ch(self) -> int:
        return self.element_positions.shape[1]

    def wavelength(self, c: float) -> float:
        return c / self.center_frequency

    def problems(self) -> list[str]:
        out = []
        pos = self.element_positions
        if pos.shape[1] < 1:
            out.append("geometry has no elements")
        if not np.all(np.isfinite(pos)):
            out.append("element positions not finite")
        elif np.any(pos[1] != 0.0):
            out.append("elements not on the x-axis")
        if not self.element_width > 0:
            out.append("element width must be positive")
        if not self.sampling_frequency > 2 * self.center_frequency:
            out.append("sampling frequency below twice the center frequency")
        return out

    @classmethod
    def linear(cls, n_ch: int, pitch: float, element_width: float | None = None,
               center_frequency: float = 5e6, sampling_frequency: float = 20e6):
        """Evenly spaced array centred on x = 0."""
        x = (np.arange(n_ch) - (n_ch - 1) / 2) * pitch
        pos = np.stack([x, np.zeros(n_ch)])
        if element_width is None:
            element_width = pitch
        return cls(pos, element_width, center_frequency, sampling_frequency)


@dataclass(frozen=True, eq=False)
class TransmitScheme:
    """Transmit delays, apodization and the two-way filtered pulse per transmit.

    Each waveform is sampled at `waveform_fs` starting at t = 0 relative to the
    moment the element fires.
    """

    delays: np.ndarray
    apodization: np.ndarray
    waveforms: tuple
    waveform_fs: float
    initial_time: float
    n_fast_time: int

    def __post_init__(self):
        object.__setattr__(self, "delays", _frozen(self.delays, ndim=2))
        object.__setattr__(self, "apodization", _frozen(self.apodization, ndim=2))
        wv = tuple(_frozen(w, ndim=1) for w in self.waveforms)
        object.__setattr__(self, "waveforms", wv)
        object.__setattr__(self, "waveform_fs", float(self.waveform_fs))
        object.__setattr__(self, "initial_time", float(self.initial_time))
        object.__setattr__(self, "n_fast_time", int(self.n_fast_time))

    @property
    def n_tx(self) -> int:
        return self.delays.shape[0]

    def firing(self, tx: int) -> np.ndarray:
        """Indices of the elements with nonzero apodization in transmit `tx`."""
        return np.flatnonzero(self.apodization[tx] > 0)

    def problems(self) -> list[str]:
        out = []
        if self.delays.shape != self.apodization.shape:
            out.append("delays and apodization shapes differ")
            return out
        if len(self.waveforms) != self.n_tx:
            out.append("one waveform per transmit required")
        if not np.all(np.isfinite(self.delays)):
            out.append("delays not finite")
        elif self.n_tx and np.any(np.abs(self.delays.min(axis=1)) > 0):
            out.append("delays not zero-anchored")
        if np.any(self.apodization < 0):
            out.append("negative apodization")
        if self.n_tx and np.any(~np.any(self.apodization > 0, axis=1)):
            out.append("transmit without firing elements")
        for w in self.waveforms:
            if w.size < 2 or not np.all(np.isfinite(w)):
                out.append("waveform needs at least 2 finite samples")
                break
        if not self.waveform_fs > 0:
            out.append("waveform sample rate must be positive")
        if self.n_fast_time < 1:
            out.append("n_fast_time must be at least 1")
        return out


@dataclass(frozen=True, eq=False)
class ScattererField:
    """Off-grid scatterers: `(2, n_sc)` positions and nonnegative amplitudes."""

    positions: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions, ndim=2))
        object.__setattr__(self, "amplitudes", _frozen(self.amplitudes, ndim=1))
        if self.positions.shape != (2, self.amplitudes.size):
            raise ValidationError(
                f"positions {self.positions.shape} do not match {self.amplitudes.size} amplitudes"
            )

    @property
    def n_sc(self) -> int:
        return self.amplitudes.size

    def problems(self) -> list[str]:
        out = []
        if self.n_sc < 1:
            out.append("field has no scatterers")
        if not np.all(np.isfinite(self.positions)):
            out.append("scatterer positions not finite")
        if np.any(self.amplitudes < 0):
            out.append("negative scatterer amplitude")
        return out

    def union(self, other: "ScattererField") -> "ScattererField":
        return ScattererField(
            np.concatenate([self.positions, other.positions], axis=1),
            np.concatenate([self.amplitudes, other.amplitudes]),
        )


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Physical parameters of the measurement model."""

    speed_of_sound: float
    attenuation_coeff: float
    element_width: float
    element_gain: np.ndarray
    initial_time_offset: float = 0.0
    lowpass_intercept: float = 1.0
    lowpass_slope: float = 0.0
    scatterer_radius: float = SCATTERER_RADIUS

    def __post_init__(self):
        object.__setattr__(self, "element_gain", _frozen(self.element_gain, ndim=1))
        for name in ("speed_of_sound", "attenuation_coeff", "element_width",
                     "initial_time_offset", "lowpass_intercept", "lowpass_slope",
                     "scatterer_radius"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def problems(self, c_bounds=(1400.0, 1600.0), elw_nominal=None) -> list[str]:
        out = []
        lo, hi = c_bounds
        if not lo <= self.speed_of_sound <= hi:
            out.append("speed of sound outside bounds")
        if np.any(self.element_gain < 0.5) or np.any(self.element_gain > 1.0):
            out.append("element gain outside [0.5, 1]")
        if not self.attenuation_coeff > 0:
            out.append("attenuation coefficient must be positive")
        if not self.element_width > 0 or (elw_nominal is not None and self.element_width > elw_nominal):
            out.append("element width outside (0, nominal]")
        return out

    def replace(self, **changes) -> "ModelParams":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ModelParams(**kw)

    @classmethod
    def nominal(cls, geometry: TransducerGeometry, c: float = 1540.0, mu: float = 0.5):
        return cls(
            speed_of_sound=c,
            attenuation_coeff=mu,
            element_width=geometry.element_width,
            element_gain=np.ones(geometry.n_ch),
        )


@dataclass(frozen=True, eq=False)
class RFDataCube:
    """`(n_tx, n_ft, n_ch)` RF samples and the TGC curve that was applied."""

    samples: np.ndarray
    tgc_curve: np.ndarray = field(default=None)

    def __post_init__(self):
        s = np.array(self.samples, copy=True)
        if s.dtype not in (np.float32, np.float64):
            s = s.astype(np.float64)
        if s.ndim != 3:
            raise ValidationError(f"RF cube must be 3-d, got shape {s.shape}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        tgc = np.ones(s.shape[1]) if self.tgc_curve is None else self.tgc_curve
        object.__setattr__(self, "tgc_curve", _frozen(tgc, ndim=1))

    @property
    def shape(self):
        return self.samples.shape

    def problems(self) -> list[str]:
        out = []
        if self.tgc_curve.size != self.samples.shape[1]:
            out.append("TGC curve length differs from fast-time axis")
        elif np.any(~(self.tgc_curve > 0)):
            out.append("TGC curve must be positive")
        if not np.all(np.isfinite(self.samples)):
            out.append("RF samples not finite")
        return out


def validate_acquisition(geometry: TransducerGeometry, scheme: TransmitScheme,
                         data: RFDataCube | None = None) -> list[str]:
    """List every violated invariant; an empty list means the acquisition is usable."""
    report = geometry.problems() + scheme.problems()
    if scheme.delays.ndim == 2 and scheme.delays.shape[1] != geometry.n_ch:
        report.append(
            f"shape mismatch: scheme has {scheme.delays.shape[1]} channels, geometry {geometry.n_ch}"
        )
    if data is not None:
        report += data.problems()
        expected = (scheme.n_tx, scheme.n_fast_time, geometry.n_ch)
        if data.shape != expected:
            report.append(f"shape mismatch: data {data.shape}, expected {expected}")
    return report
