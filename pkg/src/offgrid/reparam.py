"""Maps between unconstrained optimizer coordinates and physical parameters.

| variable            | physical value                        |
| ------------------- | ------------------------------------- |
| amplitude           | ``exp(xi)``                           |
| position            | ``(c / f_c) * xi``, or a fixed scale  |
| element width       | ``elw_nominal * sigmoid(xi)``         |
| speed of sound      | ``lo + (hi - lo) * sigmoid(xi)``      |
| attenuation         | ``exp(xi)``                           |
| element gain        | ``(1 + sigmoid(xi)) / 2``             |
| low-pass a, b       | ``exp(xi)``                           |
| time offset         | ``lo + (hi - lo) * sigmoid(xi)``      |
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import expit, logit

from .core import SCATTERER_RADIUS, ModelParams, ScattererField, TransducerGeometry, ValidationError

#: Order of the variable groups in flattened vectors.
GROUPS = ("amplitudes", "positions", "elw", "c", "mu", "t0", "gamma", "lp_a", "lp_b")
PHYSICS_GROUPS = ("elw", "c", "mu", "t0", "gamma", "lp_a", "lp_b")


@dataclass(frozen=True)
class ReparamSpec:
    """Bounds and scales of the reparameterization.

    With `center_frequency` set, positions are measured in wavelengths of the
    *current* speed of sound, ``p = (c / f_c) * xi``; otherwise in units of the
    fixed `position_scale`.
    """

    elw_nominal: float
    position_scale: float
    c_lo: float = 1400.0
    c_hi: float = 1600.0
    t0_lo: float = -8e-7
    t0_hi: float = 8e-7
    center_frequency: float | None = None

    def scale(self, c: float) -> float:
        if self.center_frequency is None:
            return self.position_scale
        return c / self.center_frequency

    def __post_init__(self):
        if not (self.c_hi > self.c_lo and self.t0_hi > self.t0_lo):
            raise ValidationError("sigmoid bounds need hi > lo")
        if not (self.position_scale > 0 and self.elw_nominal > 0):
            raise ValidationError("scale and nominal element width must be positive")

    kinds = {
        "amplitudes": "exp", "positions": "affine", "elw": "scaled_sigmoid",
        "c": "scaled_sigmoid", "mu": "exp", "t0": "scaled_sigmoid",
        "gamma": "scaled_sigmoid", "lp_a": "exp", "lp_b": "exp",
    }

    @classmethod
    def for_geometry(cls, geometry: TransducerGeometry, c_nominal: float = 1540.0, **overrides):
        """Defaults: positions in wavelengths, time offset within two carrier periods."""
        period = 1.0 / geometry.center_frequency
        kw = dict(elw_nominal=geometry.element_width,
                  position_scale=c_nominal / geometry.center_frequency,
                  t0_lo=-2 * period, t0_hi=2 * period,
                  center_frequency=geometry.center_frequency)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self):
        return asdict(self)


@dataclass
class FreeVariables:
    """Unconstrained optimization variables; also used to hold gradients."""

    amplitudes: np.ndarray
    positions: np.ndarray
    elw: float = 0.0
    c: float = 0.0
    mu: float = 0.0
    t0: float = 0.0
    gamma: np.ndarray = None
    lp_a: float = 0.0
    lp_b: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float).reshape(2, -1)
        self.gamma = np.asarray(self.gamma if self.gamma is not None else [], dtype=float)
        for name in ("elw", "c", "mu", "t0", "lp_a", "lp_b"):
            setattr(self, name, float(getattr(self, name)))

    def group(self, name) -> np.ndarray:
        return np.atleast_1d(np.asarray(getattr(self, name), dtype=float))

    def sizes(self) -> dict:
        return {g: self.group(g).size for g in GROUPS}

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.group(g).ravel() for g in GROUPS])

    def with_vector(self, vec) -> "FreeVariables":
        vec = np.asarray(vec, dtype=float)
        kw, i = {}, 0
        for g in GROUPS:
            cur = self.group(g)
            part = vec[i: i + cur.size]
            i += cur.size
            kw[g] = part.reshape(np.shape(getattr(self, g))) if np.ndim(getattr(self, g)) else float(part[0])
        return FreeVariables(**kw)

    def slices(self) -> dict:
        out, i = {}, 0
        for g in GROUPS:
            n = self.group(g).size
            out[g] = slice(i, i + n)
            i += n
        return out

    def zeros_like(self) -> "FreeVariables":
        return self.with_vector(np.zeros_like(self.to_vector()))

    def copy(self) -> "FreeVariables":
        return self.with_vector(self.to_vector().copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))

    def to_arrays(self) -> dict:
        return {f.name: np.atleast_1d(np.asarray(getattr(self, f.name), dtype=float)) for f in fields(self)}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "FreeVariables":
        kw = {}
        for f in fields(cls):
            a = np.asarray(arrays[f.name], dtype=float)
            kw[f.name] = a if f.name in ("amplitudes", "positions", "gamma") else float(a.ravel()[0])
        return cls(**kw)


def _scaled_sigmoid(xi, lo, hi):
    return lo + (hi - lo) * expit(xi)


def _inverse_scaled_sigmoid(v, lo, hi, name):
    v = np.asarray(v, dtype=float)
    if np.any(v <= lo) or np.any(v >= hi):
        raise ValidationError(f"{name} not representable: value on or outside ({lo}, {hi})")
    return logit((v - lo) / (hi - lo))


def _log(v, name):
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValidationError(f"{name} not representable: must be positive")
    return np.log(v)


def constrain(xi: FreeVariables, spec: ReparamSpec,
              radius: float = SCATTERER_RADIUS) -> tuple[ScattererField, ModelParams]:
    c = _scaled_sigmoid(xi.c, spec.c_lo, spec.c_hi)
    field = ScattererField(spec.scale(c) * xi.positions, np.exp(xi.amplitudes))
    params = ModelParams(
        speed_of_sound=c,
        attenuation_coeff=np.exp(xi.mu),
        element_width=spec.elw_nominal * expit(xi.elw),
        element_gain=0.5 * (1.0 + expit(xi.gamma)),
        initial_time_offset=_scaled_sigmoid(xi.t0, spec.t0_lo, spec.t0_hi),
        lowpass_intercept=np.exp(xi.lp_a),
        lowpass_slope=np.exp(xi.lp_b),
        scatterer_radius=radius,
    )
    return field, params


def unconstrain(field: ScattererField, params: ModelParams, spec: ReparamSpec) -> FreeVariables:
    return FreeVariables(
        amplitudes=_log(field.amplitudes, "amplitude"),
        positions=np.asarray(field.positions) / spec.scale(params.speed_of_sound),
        elw=float(_inverse_scaled_sigmoid(params.element_width, 0.0, spec.elw_nominal, "element width")),
        c=float(_inverse_scaled_sigmoid(params.speed_of_sound, spec.c_lo, spec.c_hi, "speed of sound")),
        mu=float(_log(params.attenuation_coeff, "attenuation")),
        t0=float(_inverse_scaled_sigmoid(params.initial_time_offset, spec.t0_lo, spec.t0_hi, "time offset")),
        gamma=_inverse_scaled_sigmoid(params.element_gain, 0.5, 1.0, "element gain"),
        lp_a=float(_log(params.lowpass_intercept, "low-pass intercept")),
        lp_b=float(_log(params.lowpass_slope, "low-pass slope")),
    )


def chain(xi: FreeVariables, grad, spec: ReparamSpec) -> FreeVariables:
    """Pull a `forward.PhysicalGradient` back to the unconstrained coordinates."""

    def dsig(x, lo, hi):
        s = expit(x)
        return (hi - lo) * s * (1.0 - s)

    c = _scaled_sigmoid(xi.c, spec.c_lo, spec.c_hi)
    g_c = grad.speed_of_sound
    if spec.center_frequency is not None:
        g_c = g_c + float(np.sum(grad.positions * xi.positions)) / spec.center_frequency
    return FreeVariables(
        amplitudes=grad.amplitudes * np.exp(xi.amplitudes),
        positions=grad.positions * spec.scale(c),
        elw=grad.element_width * dsig(xi.elw, 0.0, spec.elw_nominal),
        c=g_c * dsig(xi.c, spec.c_lo, spec.c_hi),
        mu=grad.attenuation_coeff * np.exp(xi.mu),
        t0=grad.initial_time_offset * dsig(xi.t0, spec.t0_lo, spec.t0_hi),
        gamma=grad.element_gain * dsig(xi.gamma, 0.5, 1.0),
        lp_a=grad.lowpass_intercept * np.exp(xi.lp_a),
        lp_b=grad.lowpass_slope * np.exp(xi.lp_b),
    )
