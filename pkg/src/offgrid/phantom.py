"""Synthetic scenes and RF simulation for desk-scale experiments.

Simulated data shares the forward model with the solver, so any experiment
that solves data from `simulate_rf` with the same model is an inverse crime;
tests that rely on it say so.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import (ModelParams, RFDataCube, ScattererField, TransducerGeometry, TransmitScheme,
                   ValidationError)
from .forward import Features, ForwardModel


def gaussian_pulse(f_c: float, fractional_bandwidth: float = 0.6, fs: float = 160e6):
    """Gaussian-modulated sine starting at t = 0, returned with its peak time.

    The envelope width is set from the -6 dB fractional bandwidth.
    """
    sigma = math.sqrt(2 * math.log(2)) / (math.pi * fractional_bandwidth * f_c)
    t_c = 4 * sigma
    t = np.arange(int(math.ceil(8 * sigma * fs)) + 1) / fs
    pulse = np.exp(-0.5 * ((t - t_c) / sigma) ** 2) * np.sin(2 * np.pi * f_c * (t - t_c))
    return pulse, t_c


def make_scheme(geometry: TransducerGeometry, mode: str = "sa", n_tx: int = 2, n_ft: int = 512,
                initial_time: float = 0.0, elements=None, angles=None,
                fractional_bandwidth: float = 0.6, waveform_oversampling: int = 8,
                c: float = 1540.0) -> TransmitScheme:
    """Build a transmit scheme.

    Modes:
        ``sa``: one element per transmit (`elements`, default spread over the array).
        ``group``: all listed `elements` fire together with zero delay in every transmit.
        ``plane``: every element fires, steered by `angles` (radians).
    """
    n_ch = geometry.n_ch
    delays = np.zeros((n_tx, n_ch))
    apod = np.zeros((n_tx, n_ch))
    x = geometry.element_positions[0]
    if mode == "sa":
        if elements is None:
            elements = np.round(np.linspace(0, n_ch - 1, n_tx + 2)[1:-1]).astype(int)
        for t, e in enumerate(elements):
            apod[t, e] = 1.0
    elif mode == "group":
        if elements is None:
            raise ValidationError("group mode needs elements")
        apod[:, list(elements)] = 1.0
    elif mode == "plane":
        angles = np.zeros(n_tx) if angles is None else np.asarray(angles, dtype=float)
        for t, a in enumerate(angles):
            d = x * math.sin(a) / c
            delays[t] = d - d.min()
        apod[:] = 1.0
    else:
        raise ValidationError(f"unknown transmit mode {mode!r}")
    fs_wf = waveform_oversampling * geometry.sampling_frequency
    pulse, _ = gaussian_pulse(geometry.center_frequency, fractional_bandwidth, fs_wf)
    return TransmitScheme(delays, apod, tuple(pulse for _ in range(n_tx)), fs_wf, initial_time, n_ft)


def tgc_from_db(points_db, n_ft: int) -> np.ndarray:
    """Piecewise-linear (in dB) gain curve through evenly spaced control points."""
    points_db = np.asarray(points_db, dtype=float)
    xp = np.linspace(0, n_ft - 1, points_db.size)
    return 10.0 ** (np.interp(np.arange(n_ft), xp, points_db) / 20.0)


@dataclass
class Cyst:
    x: float
    z: float
    radius: float
    echogenicity: float = 0.0

    def contains(self, pos):
        return (pos[0] - self.x) ** 2 + (pos[1] - self.z) ** 2 <= self.radius ** 2


@dataclass
class Wire:
    x: float
    z: float
    amplitude: float = 10.0


@dataclass
class SceneSpec:
    """Scene description.

    Args:
        extent: ``(x_min, x_max, z_min, z_max)`` in meters.
        density: background scatterers per mm^2 (Poisson).
        amplitude_range: uniform background amplitude range.
        cysts: regions scaling the background amplitude.
        wires: isolated strong point targets.
    """

    extent: tuple = (-4e-3, 4e-3, 8e-3, 16e-3)
    density: float = 3.0 / (0.308 ** 2)
    amplitude_range: tuple = (0.5, 1.0)
    cysts: list = dc_field(default_factory=list)
    wires: list = dc_field(default_factory=list)

    def area_mm2(self) -> float:
        x0, x1, z0, z1 = self.extent
        return (x1 - x0) * (z1 - z0) * 1e6


def gen_phantom(spec: SceneSpec, rng: np.random.Generator) -> ScattererField:
    x0, x1, z0, z1 = spec.extent
    if not (x1 > x0 and z1 > z0 > 0):
        raise ValidationError("scene extent must be non-empty at positive depth")
    for c in spec.cysts:
        if not (x0 <= c.x <= x1 and z0 <= c.z <= z1):
            raise ValidationError("cyst centre outside the scene extent")
    for i, a in enumerate(spec.cysts):
        for b in spec.cysts[i + 1:]:
            if math.hypot(a.x - b.x, a.z - b.z) < a.radius + b.radius and a.echogenicity != b.echogenicity:
                warnings.warn("overlapping cysts with different echogenicity; last region wins")
    n = rng.poisson(spec.density * spec.area_mm2())
    pos = np.stack([rng.uniform(x0, x1, n), rng.uniform(z0, z1, n)])
    amp = rng.uniform(*spec.amplitude_range, n)
    for c in spec.cysts:
        amp = np.where(c.contains(pos), amp * c.echogenicity, amp)
    keep = amp > 0
    pos, amp = pos[:, keep], amp[keep]
    if spec.wires:
        wpos = np.array([[w.x, w.z] for w in spec.wires]).T
        pos = np.concatenate([pos, wpos], axis=1)
        amp = np.concatenate([amp, [w.amplitude for w in spec.wires]])
    if amp.size == 0:
        raise ValidationError("scene produced no scatterers")
    return ScattererField(pos, amp)


def simulate_rf(field: ScattererField, params: ModelParams, geometry: TransducerGeometry,
                scheme: TransmitScheme, noise_std: float = 0.0, rng: np.random.Generator | None = None,
                model_kind: str = "full", tgc_curve=None, features: Features = Features()) -> RFDataCube:
    """Noiseless prediction plus white noise amplified by the TGC curve."""
    model = ForwardModel(geometry, scheme, tgc_curve, model_kind, features)
    cube = model.predict_cube(field, params)
    if noise_std > 0:
        if rng is None:
            raise ValidationError("noise requires an rng")
        cube = cube + noise_std * rng.standard_normal(cube.shape) * model.tgc[None, :, None]
    return RFDataCube(cube, model.tgc)
