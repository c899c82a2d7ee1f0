"""INI run configuration.

One section per module. Every key has a default; keys that are not known
raise `ValidationError`. `RunConfig.to_ini` writes the fully resolved
configuration so that a run can be repeated exactly.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace

from .core import ValidationError
from .forward import Features
from .optimizer import DEFAULT_LR, SolverConfig
from .red import RedConfig
from .reparam import GROUPS


@dataclass
class AcquisitionSection:
    n_ch: int = 32
    pitch: float = 3e-4
    element_width: float = 2.7e-4
    center_frequency: float = 5e6
    sampling_frequency: float = 20e6
    mode: str = "sa"
    n_tx: int = 2
    n_ft: int = 512
    elements: tuple = ()
    angles: tuple = ()
    fractional_bandwidth: float = 0.6
    initial_time: float = 0.0
    tgc_db: tuple = (0.0, 10.0, 20.0, 30.0)


@dataclass
class SceneSection:
    extent: tuple = (-4e-3, 4e-3, 8e-3, 16e-3)
    density: float = 3.0 / (0.308 ** 2)
    amplitude_min: float = 0.5
    amplitude_max: float = 1.0
    cysts: str = ""
    wires: str = ""


@dataclass
class TruthSection:
    c: float = 1540.0
    mu: float = 0.5
    elw_fraction: float = 1.0
    gamma_min: float = 1.0
    gamma_max: float = 1.0
    t0: float = 0.0
    lp_a: float = 1.0
    lp_b: float = 0.0


@dataclass
class SimulateSection:
    model_kind: str = "full"
    noise_std: float = 0.0
    noise_relative: float = 0.0


@dataclass
class InitSection:
    method: str = "grid"
    count: int = 0
    c: float = 1540.0
    min_distance: float = 5e-4


@dataclass
class BeamformSection:
    c: float = 1540.0
    f_number: float = 0.5
    window: str = "rect"
    subaperture: int = 30
    diagonal_loading: float = 1e-4
    lens_delay: float = 0.0
    dynamic_range_db: float = 60.0
    coherent: bool = True
    extent: tuple = (-4e-3, 4e-3, 8e-3, 16e-3)
    dx: float = 7.7e-5
    dz: float = 7.7e-5


@dataclass
class RedSection:
    mu: float = 2000.0
    beta: float = 1000.0
    eps: float = 5e-4
    h: float = 0.8
    max_outer: int = 200
    patch: int = 5
    window: int = 11
    dx: float = 1.0267e-4
    dz: float = 7.7e-5

    def red_config(self) -> RedConfig:
        return RedConfig(self.mu, self.beta, self.eps, self.h, self.max_outer, self.patch, self.window)


@dataclass
class RenderSection:
    r: float = 0.0
    weight_by_amplitude: bool = True


@dataclass
class MetricsSection:
    bins: int = 256
    log_domain: bool = True


SECTIONS = {
    "acquisition": AcquisitionSection,
    "scene": SceneSection,
    "truth": TruthSection,
    "simulate": SimulateSection,
    "init": InitSection,
    "beamform": BeamformSection,
    "red": RedSection,
    "render": RenderSection,
    "metrics": MetricsSection,
}

# SolverConfig keys that need custom text forms
_SOLVER_SKIP = {"learning_rates", "features", "frozen", "position_box", "a0", "c_init", "seed"}


def _parse(text: str, kind, key: str):
    text = text.strip()
    try:
        if kind in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
        if kind in ("tuple", tuple):
            return tuple(float(v) for v in text.replace(",", " ").split())
        if kind in ("names",):
            return tuple(v for v in text.replace(",", " ").split())
        if kind in ("float | None",):
            return None if text.lower() in ("", "none", "auto") else float(text)
        if kind in ("tuple | None",):
            return None if text.lower() in ("", "none", "auto") else tuple(float(v) for v in text.replace(",", " ").split())
        return text
    except ValueError as err:
        raise ValidationError(f"bad value for {key}: {text!r}") from err


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _solver_kinds() -> dict:
    kinds = {}
    for f in fields(SolverConfig):
        if f.name in _SOLVER_SKIP:
            continue
        kinds[f.name] = f.type
    kinds.update({f"lr_{g}": "float" for g in GROUPS})
    kinds.update({"disable": "names", "frozen": "names", "position_box": "tuple | None",
                  "a0": "float | None", "c_init": "float | None"})
    return kinds


@dataclass
class RunConfig:
    acquisition: AcquisitionSection = field(default_factory=AcquisitionSection)
    scene: SceneSection = field(default_factory=SceneSection)
    truth: TruthSection = field(default_factory=TruthSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    init: InitSection = field(default_factory=InitSection)
    solver: dict = field(default_factory=dict)
    beamform: BeamformSection = field(default_factory=BeamformSection)
    red: RedSection = field(default_factory=RedSection)
    render: RenderSection = field(default_factory=RenderSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    seed: int = 0

    def solver_config(self, **overrides) -> SolverConfig:
        """`SolverConfig` from the [solver] section (seed from the run)."""
        s = dict(self.solver)
        lrs = dict(DEFAULT_LR)
        for g in GROUPS:
            if f"lr_{g}" in s:
                lrs[g] = s.pop(f"lr_{g}")
        feats = Features()
        for name in s.pop("disable", ()):
            feats = feats.without(name)
        kw = dict(s)
        kw.update(learning_rates=lrs, features=feats, seed=self.seed)
        if "frozen" in kw:
            kw["frozen"] = tuple(kw["frozen"])
        kw.update(overrides)
        return SolverConfig(**kw)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["run"] = {"seed": str(self.seed)}
        for name in SECTIONS:
            sec = getattr(self, name)
            cp[name] = {f.name: _fmt(getattr(sec, f.name)) for f in fields(sec)}
        defaults = SolverConfig()
        resolved = {}
        for key in _solver_kinds():
            if key in self.solver:
                resolved[key] = self.solver[key]
            elif key.startswith("lr_") and key[3:] in GROUPS:
                resolved[key] = defaults.learning_rates[key[3:]]
            elif key == "disable":
                resolved[key] = ()
            else:
                resolved[key] = getattr(defaults, key)
        cp["solver"] = {k: _fmt(v) for k, v in resolved.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def load_config(text: str | None = None, seed: int | None = None) -> RunConfig:
    """Parse INI text (None gives all defaults); `seed` overrides ``[run] seed``."""
    cp = configparser.ConfigParser(interpolation=None)
    if text:
        try:
            cp.read_string(text)
        except configparser.Error as err:
            raise ValidationError(f"config: {err}") from err
    cfg = RunConfig()
    for sec in cp.sections():
        items = dict(cp[sec])
        if sec == "run":
            unknown = set(items) - {"seed"}
            if unknown:
                raise ValidationError(f"unknown keys in [run]: {sorted(unknown)}")
            if "seed" in items:
                cfg.seed = _parse(items["seed"], "int", "seed")
        elif sec == "solver":
            kinds = _solver_kinds()
            unknown = set(items) - set(kinds)
            if unknown:
                raise ValidationError(f"unknown keys in [solver]: {sorted(unknown)}")
            cfg.solver = {k: _parse(v, kinds[k], k) for k, v in items.items()}
        elif sec in SECTIONS:
            cls = SECTIONS[sec]
            kinds = {f.name: f.type for f in fields(cls)}
            unknown = set(items) - set(kinds)
            if unknown:
                raise ValidationError(f"unknown keys in [{sec}]: {sorted(unknown)}")
            parsed = {k: _parse(v, kinds[k], k) for k, v in items.items()}
            setattr(cfg, sec, replace(getattr(cfg, sec), **parsed))
        else:
            raise ValidationError(f"unknown config section [{sec}]")
    if seed is not None:
        cfg.seed = seed
    cfg.solver_config()  # validate eagerly
    return cfg
