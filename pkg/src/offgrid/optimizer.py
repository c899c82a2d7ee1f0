"""Adam over random batches of RF samples.

`solve` draws a batch of sample indices per iteration, evaluates the exact
gradient of the batch MSE in the unconstrained coordinates and applies an
Adam step with per-group learning rates. Physics parameters are held until a
warm-up iteration so that early amplitude changes cannot drag them away.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logit

from .core import NumericalError, RFDataCube, TransducerGeometry, TransmitScheme, ValidationError, validate_acquisition
from .forward import Features, ForwardModel, SampleIndex
from .grad import inactive_groups, loss_and_gradient, batch_loss
from .reparam import GROUPS, PHYSICS_GROUPS, FreeVariables, ReparamSpec, constrain

log = logging.getLogger(__name__)

DEFAULT_LR = {
    "amplitudes": 1e-2, "positions": 1e-2,
    "elw": 1e-3, "c": 1e-3, "mu": 1e-3, "t0": 1e-3, "gamma": 1e-3, "lp_a": 1e-3, "lp_b": 1e-3,
}


@dataclass
class SolverConfig:
    """Settings for `init_grid` and `solve`.

    `extent` and `position_box` are ``(x_min, x_max, z_min, z_max)``. A None
    box means the extent padded by two wavelengths with a 1 mm depth floor.
    """

    grid_nx: int = 48
    grid_nz: int = 48
    extent: tuple = (-4e-3, 4e-3, 8e-3, 16e-3)
    batch_size: int = 4096
    iterations: int = 30000
    learning_rates: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    lr_final_factor: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    model_kind: str = "full"
    features: Features = field(default_factory=Features)
    position_box: tuple | None = None
    frozen: tuple = ()
    physics_warmup: int = 500
    eval_every: int = 100
    heldout_size: int = 1024
    a0: float | None = None
    a0_rms_ratio: float = 0.1
    c_init: float | None = None
    c_bounds: tuple = (1400.0, 1600.0)
    t0_bound_periods: float = 2.0
    mu_init: float = 0.5
    elw_init_fraction: float = 0.8
    gamma_init: float = 0.95
    t0_init: float = 0.0
    lp_a_init: float = 0.9
    lp_b_init: float = 1e3
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1:
            raise ValidationError("batch_size and iterations must be at least 1")
        if self.grid_nx < 1 or self.grid_nz < 1:
            raise ValidationError("grid needs at least one scatterer")
        x0, x1, z0, z1 = self.extent
        if not (x1 >= x0 and z1 >= z0 and z0 > 0):
            raise ValidationError("extent must lie at positive depth")
        lrs = dict(DEFAULT_LR)
        lrs.update(self.learning_rates)
        if any(v <= 0 for v in lrs.values()):
            raise ValidationError("learning rates must be positive")
        self.learning_rates = lrs
        unknown = set(self.frozen) - set(GROUPS)
        if unknown:
            raise ValidationError(f"unknown variable groups {sorted(unknown)}")

    def reparam(self, geometry: TransducerGeometry) -> ReparamSpec:
        period = 1.0 / geometry.center_frequency
        return ReparamSpec.for_geometry(
            geometry, c_lo=self.c_bounds[0], c_hi=self.c_bounds[1],
            t0_lo=-self.t0_bound_periods * period, t0_hi=self.t0_bound_periods * period)

    def box(self, geometry: TransducerGeometry) -> tuple:
        if self.position_box is not None:
            return tuple(self.position_box)
        pad = 2 * geometry.wavelength(sum(self.c_bounds) / 2)
        x0, x1, z0, z1 = self.extent
        return (x0 - pad, x1 + pad, max(z0 - pad, 1e-3), z1 + pad)


@dataclass
class Solution:
    free: FreeVariables
    field: object
    params: object
    loss_trace: np.ndarray
    heldout_trace: np.ndarray
    wall_time: float
    config: SolverConfig = None


def _initial_physics(config: SolverConfig, geometry: TransducerGeometry, spec: ReparamSpec) -> dict:
    lo, hi = config.c_bounds
    c0 = (lo + hi) / 2 if config.c_init is None else config.c_init
    g = np.full(geometry.n_ch, config.gamma_init)
    t0 = (config.t0_init - spec.t0_lo) / (spec.t0_hi - spec.t0_lo)
    return dict(
        elw=float(logit(config.elw_init_fraction)),
        c=float(logit((c0 - lo) / (hi - lo))),
        mu=float(np.log(config.mu_init)),
        t0=float(logit(t0)),
        gamma=logit(2 * g - 1),
        lp_a=float(np.log(config.lp_a_init)),
        lp_b=float(np.log(config.lp_b_init)),
    )


def init_grid(config: SolverConfig, geometry: TransducerGeometry, a0: float | None = None) -> FreeVariables:
    """Regular scatterer grid at the cell centres of `config.extent`."""
    x0, x1, z0, z1 = config.extent
    bx0, bx1, bz0, bz1 = config.box(geometry)
    if x0 < bx0 or x1 > bx1 or z0 < bz0 or z1 > bz1:
        raise ValidationError("extent lies outside the position box")
    dx = (x1 - x0) / config.grid_nx
    dz = (z1 - z0) / config.grid_nz
    xs = x0 + dx * (np.arange(config.grid_nx) + 0.5)
    zs = z0 + dz * (np.arange(config.grid_nz) + 0.5)
    X, Z = np.meshgrid(xs, zs, indexing="xy")
    return init_from_points(np.stack([X.ravel(), Z.ravel()]), config, geometry, a0)


def init_from_points(positions, config: SolverConfig, geometry: TransducerGeometry,
                     a0: float | None = None, amplitudes=None) -> FreeVariables:
    """Free variables for scatterers at given positions and initial physics guesses."""
    spec = config.reparam(geometry)
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[1]
    if amplitudes is None:
        a = np.full(n, a0 if a0 is not None else (config.a0 or 1.0))
    else:
        a = np.asarray(amplitudes, dtype=float)
    physics = _initial_physics(config, geometry, spec)
    lo, hi = config.c_bounds
    c0 = (lo + hi) / 2 if config.c_init is None else config.c_init
    return FreeVariables(amplitudes=np.log(a), positions=positions / spec.scale(c0), **physics)


def sample_batch(rng: np.random.Generator, n_tx: int, n_ft: int, n_ch: int, batch_size: int) -> SampleIndex:
    """Uniform draw without replacement over the whole cube."""
    total = n_tx * n_ft * n_ch
    if batch_size > total:
        raise ValidationError("batch larger than the data cube")
    return SampleIndex.from_flat(rng.choice(total, batch_size, replace=False), n_tx, n_ft, n_ch)


@dataclass
class AdamState:
    params: FreeVariables
    m: dict
    v: dict
    t: dict
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: FreeVariables, beta1=0.9, beta2=0.999, eps=1e-8):
        zeros = {g: np.zeros_like(params.group(g)) for g in GROUPS}
        return cls(params, zeros, {g: z.copy() for g, z in zeros.items()}, {g: 0 for g in GROUPS},
                   beta1, beta2, eps)


def adam_step(state: AdamState, grads: FreeVariables, lr_groups: dict) -> AdamState:
    """One bias-corrected Adam update; groups with a zero or missing rate are untouched."""
    if not grads.is_finite():
        raise NumericalError("divergence detected: non-finite gradient")
    b1, b2 = state.beta1, state.beta2
    new = state.params.copy()
    m, v, t = dict(state.m), dict(state.v), dict(state.t)
    for g in GROUPS:
        lr = lr_groups.get(g, 0.0)
        if lr <= 0:
            continue
        grad = grads.group(g)
        if grad.shape != m[g].shape:
            raise ValidationError(f"gradient shape mismatch in group {g}")
        t[g] += 1
        m[g] = b1 * m[g] + (1 - b1) * grad
        v[g] = b2 * v[g] + (1 - b2) * grad * grad
        m_hat = m[g] / (1 - b1 ** t[g])
        v_hat = v[g] / (1 - b2 ** t[g])
        step = new.group(g) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        cur = getattr(new, g)
        setattr(new, g, step.reshape(np.shape(cur)) if np.ndim(cur) else float(step[0]))
    return replace(state, params=new, m=m, v=v, t=t)


def _clamp_positions(free: FreeVariables, box, spec: ReparamSpec):
    c = spec.c_lo + (spec.c_hi - spec.c_lo) / (1.0 + np.exp(-free.c))
    scale = spec.scale(c)
    x0, x1, z0, z1 = box
    free.positions[0] = np.clip(free.positions[0], x0 / scale, x1 / scale)
    free.positions[1] = np.clip(free.positions[1], z0 / scale, z1 / scale)


def auto_a0(model: ForwardModel, positions, observed: RFDataCube, spec: ReparamSpec,
            init: FreeVariables, batch: SampleIndex, ratio: float) -> float:
    """Amplitude that makes the initial prediction RMS `ratio` times the data RMS."""
    unit = init.copy()
    unit.amplitudes = np.zeros(positions.shape[1])
    f, p = constrain(unit, spec)
    pred = model.predict(batch, f, p)
    y = observed.samples[batch.tx, batch.ft, batch.ch]
    p_rms = float(np.sqrt(np.mean(pred ** 2)))
    y_rms = float(np.sqrt(np.mean(np.asarray(y, float) ** 2)))
    if p_rms == 0 or y_rms == 0:
        return 1.0
    return ratio * y_rms / p_rms


def solve(observed: RFDataCube, geometry: TransducerGeometry, scheme: TransmitScheme,
          config: SolverConfig, init: FreeVariables | None = None, resume: dict | None = None,
          checkpoint=None, progress=None) -> Solution:
    """Fit scatterers and physics parameters to `observed`.

    Args:
        init: starting point; defaults to `init_grid` with an automatic amplitude.
        resume: ``{"state": AdamState, "iteration": int, "loss_trace": ..., "heldout_trace": ...}``.
        checkpoint: ``callable(iteration, state, loss_trace, heldout_trace)`` invoked every
            ``config.checkpoint_every`` iterations.
        progress: ``callable(iteration, loss)`` for logging.
    """
    report = validate_acquisition(geometry, scheme, observed)
    if report:
        raise ValidationError("; ".join(report))
    t_start = time.perf_counter()
    spec = config.reparam(geometry)
    model = ForwardModel(geometry, scheme, observed.tgc_curve, config.model_kind, config.features)
    n_tx, n_ft, n_ch = observed.shape
    total = n_tx * n_ft * n_ch
    ss = np.random.SeedSequence(config.seed)
    rng_eval, rng_batch = (np.random.default_rng(s) for s in ss.spawn(2))
    n_held = min(config.heldout_size, total // 10) if config.heldout_size > 0 else 0
    perm = rng_eval.permutation(total)
    heldout = SampleIndex.from_flat(np.sort(perm[:n_held]), n_tx, n_ft, n_ch) if n_held else None
    pool = np.sort(perm[n_held:])
    batch_size = min(config.batch_size, pool.size)
    scale = float(np.mean(np.asarray(observed.samples, float) ** 2)) or 1.0

    if resume is not None:
        state = resume["state"]
        start = int(resume["iteration"])
        trace = list(resume.get("loss_trace", []))
        held_trace = [tuple(r) for r in resume.get("heldout_trace", [])]
    else:
        if init is None:
            init = init_grid(config, geometry)
            if config.a0 is None:
                probe = heldout if heldout is not None else SampleIndex.from_flat(pool[:batch_size], n_tx, n_ft, n_ch)
                a0 = auto_a0(model, init.positions, observed, spec, init, probe, config.a0_rms_ratio)
                init.amplitudes = np.full(init.amplitudes.size, np.log(a0))
        state = AdamState.create(init.copy(), config.beta1, config.beta2, config.eps)
        start, trace, held_trace = 0, [], []

    if scale == 1.0 and not np.any(observed.samples):
        # all-zero data: normalize by the starting prediction instead
        probe = SampleIndex.from_flat(pool[:: max(1, pool.size // batch_size)], n_tx, n_ft, n_ch)
        f0, p0 = constrain(state.params, spec)
        scale = float(np.mean(model.predict(probe, f0, p0) ** 2)) or 1.0

    inactive = inactive_groups(model, config.frozen)
    box = config.box(geometry)
    # replay the batch stream so a resumed run draws the same batches
    for _ in range(start):
        rng_batch.choice(pool.size, batch_size, replace=False)

    for it in range(start, config.iterations):
        sel = pool[rng_batch.choice(pool.size, batch_size, replace=False)]
        batch = SampleIndex.from_flat(sel, n_tx, n_ft, n_ch)
        loss, grad = loss_and_gradient(state.params, batch, observed, model, spec, inactive, scale)
        decay = config.lr_final_factor ** (it / max(config.iterations - 1, 1))
        lrs = {}
        for g in GROUPS:
            if g in inactive or (g in PHYSICS_GROUPS and it < config.physics_warmup):
                continue
            lrs[g] = config.learning_rates[g] * decay
        state = adam_step(state, grad, lrs)
        _clamp_positions(state.params, box, spec)
        trace.append(loss * scale)
        if heldout is not None and config.eval_every and (it + 1) % config.eval_every == 0:
            held_trace.append((it + 1, batch_loss(state.params, heldout, observed, model, spec)))
        if progress is not None:
            progress(it, loss * scale)
        if checkpoint is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            checkpoint(it + 1, state, trace, held_trace)

    free = state.params
    f, p = constrain(free, spec)
    return Solution(
        free=free, field=f, params=p,
        loss_trace=np.asarray(trace, dtype=float),
        heldout_trace=np.asarray(held_trace, dtype=float).reshape(-1, 2),
        wall_time=time.perf_counter() - t_start,
        config=config,
    )
