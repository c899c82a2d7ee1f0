"""Mean-squared batch loss and its exact gradient in the free coordinates."""

from __future__ import annotations

import numpy as np

from .core import RFDataCube, ValidationError
from .forward import ForwardModel, SampleIndex
from .reparam import GROUPS, FreeVariables, ReparamSpec, chain, constrain

#: Variable groups that carry no information when a feature is switched off.
FEATURE_GROUPS = {
    "directivity": ("elw",),
    "element_gain": ("gamma",),
    "absorption": ("mu",),
    "waveform_deformation": ("lp_a", "lp_b"),
    "initial_time_offset": ("t0",),
}


def inactive_groups(model: ForwardModel, frozen=()) -> set:
    out = set(frozen)
    for feat, groups in FEATURE_GROUPS.items():
        if not getattr(model.features, feat):
            out.update(groups)
    return out


def _observed(observed, batch: SampleIndex) -> np.ndarray:
    samples = observed.samples if isinstance(observed, RFDataCube) else np.asarray(observed)
    return np.asarray(samples[batch.tx, batch.ft, batch.ch], dtype=float)


def batch_loss(free: FreeVariables, batch: SampleIndex, observed, model: ForwardModel,
               spec: ReparamSpec) -> float:
    batch = batch.as_arrays()
    if batch.size == 0:
        raise ValidationError("batch must not be empty")
    field, params = constrain(free, spec)
    resid = model.predict(batch, field, params) - _observed(observed, batch)
    return float(np.mean(resid ** 2))


def loss_and_gradient(free: FreeVariables, batch: SampleIndex, observed, model: ForwardModel,
                      spec: ReparamSpec, frozen=(), scale: float = 1.0):
    """Loss divided by `scale` and its gradient; frozen groups get exact zeros."""
    batch = batch.as_arrays()
    if batch.size == 0:
        raise ValidationError("batch must not be empty")
    field, params = constrain(free, spec)
    y = _observed(observed, batch)
    norm = 2.0 / (batch.size * scale)

    def cot(pred, sl):
        return norm * (pred - y[sl])

    pred, pgrad = model.vjp(batch, cot, field, params)
    loss = float(np.mean((pred - y) ** 2)) / scale
    grad = chain(free, pgrad, spec)
    for g in inactive_groups(model, frozen):
        cur = getattr(grad, g)
        setattr(grad, g, np.zeros_like(cur) if np.ndim(cur) else 0.0)
    return loss, grad


def batch_gradient(free: FreeVariables, batch: SampleIndex, observed, model: ForwardModel,
                   spec: ReparamSpec, frozen=()) -> FreeVariables:
    return loss_and_gradient(free, batch, observed, model, spec, frozen)[1]


def finite_difference_gradient(free: FreeVariables, batch: SampleIndex, observed,
                               model: ForwardModel | None, spec: ReparamSpec | None,
                               h: float = 1e-5, loss_fn=None, frozen=(),
                               avoid_breakpoints: bool = True, max_shrink: int = 6) -> FreeVariables:
    """Central differences with step ``h * max(1, |xi|)`` per coordinate.

    `loss_fn(vector) -> float` overrides the RF loss (test hook). When
    `avoid_breakpoints` is set, a step that would move any waveform lookup
    into another interpolation cell (or switch the first-arriving element) is
    shrunk by 10x until both probes stay in the cell of the centre point.
    """
    if h <= 0:
        raise ValidationError("finite-difference step must be positive")
    x0 = free.to_vector()
    if loss_fn is None:
        def loss_fn(v):
            return batch_loss(free.with_vector(v), batch, observed, model, spec)
        check = avoid_breakpoints and model is not None
    else:
        check = False

    def signature(v):
        f, p = constrain(free.with_vector(v), spec)
        return model.segments(batch, f, p)

    sig0 = signature(x0) if check else None
    skip = set()
    if model is not None:
        sl = free.slices()
        for g in inactive_groups(model, frozen):
            skip.update(range(sl[g].start, sl[g].stop))
    out = np.zeros_like(x0)
    for i in range(x0.size):
        if i in skip:
            continue
        step = h * max(1.0, abs(x0[i]))
        for _ in range(max_shrink + 1):
            xp = x0.copy()
            xm = x0.copy()
            xp[i] += step
            xm[i] -= step
            if not check or (np.array_equal(signature(xp), sig0) and np.array_equal(signature(xm), sig0)):
                break
            step /= 10.0
        out[i] = (loss_fn(xp) - loss_fn(xm)) / (2 * step)
    return free.with_vector(out)


def max_relative_error(a: FreeVariables, b: FreeVariables, floor: float = 1e-8) -> dict:
    """Per group ``max |a - b| / max(|b|, floor)`` (absolute below the floor)."""
    out = {}
    for g in GROUPS:
        x, y = a.group(g), b.group(g)
        if x.size == 0:
            continue
        err = np.abs(x - y)
        denom = np.maximum(np.abs(y), floor)
        rel = np.where(err <= floor, 0.0, err / denom)
        out[g] = float(rel.max())
    return out
