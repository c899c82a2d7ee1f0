"""Matrix-free forward measurement model.

A sample `(tx, ft, ch)` is the TGC- and gain-scaled sum, over transmitting
paths and scatterers, of the transmit waveform delayed by the transmit delay
and the two travel times. Each term is weighted by the transmit apodization,
the element directivity on both sides, absorption and spherical spreading.
The waveform itself is low-pass filtered more strongly for longer travel
times, which is realised with a bank of pre-filtered copies.

Two variants exist. The *full* model sums over every firing element. The
*wavefront* model keeps only the element whose wave reaches the scatterer
first, which makes the transmit side independent of the number of firing
elements.

`ForwardModel.vjp` returns the exact vector-Jacobian product with respect to
all physical inputs; the `grad` module chains it through the
reparameterization.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.signal import firwin

from .core import (NumericalError, ModelParams, ScattererField, TransducerGeometry,
                   TransmitScheme, ValidationError)

MODEL_KINDS = ("full", "wavefront")

#: Number of pre-filtered waveform variants.
BANK_SIZE = 8
#: Lowest cutoff of the bank relative to the RF Nyquist frequency.
BANK_MIN_CUTOFF = 0.1
#: Variants are trimmed where every variant is below this fraction of the peak.
BANK_TRIM_TOL = 1e-6

# conversion of dB/cm/MHz * Hz * m into nepers
_DB_CM_MHZ = 1e-6 * 100 / 20 * math.log(10)

_CHUNK_ELEMENTS = 1 << 20


def n_threads() -> int:
    """Worker count from ``OFFGRID_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("OFFGRID_THREADS", "1")))
    except ValueError:
        return 1


class SampleIndex(NamedTuple):
    """Index of one RF sample; with array fields it describes a whole batch."""

    tx: int | np.ndarray
    ft: int | np.ndarray
    ch: int | np.ndarray

    def as_arrays(self) -> "SampleIndex":
        return SampleIndex(*(np.atleast_1d(np.asarray(a, dtype=np.int64)) for a in self))

    @property
    def size(self) -> int:
        return int(np.size(self.tx))

    @classmethod
    def full_cube(cls, n_tx, n_ft, n_ch) -> "SampleIndex":
        tx, ft, ch = np.meshgrid(np.arange(n_tx), np.arange(n_ft), np.arange(n_ch), indexing="ij")
        return cls(tx.ravel(), ft.ravel(), ch.ravel())

    @classmethod
    def from_flat(cls, flat, n_tx, n_ft, n_ch) -> "SampleIndex":
        tx, ft, ch = np.unravel_index(np.asarray(flat, dtype=np.int64), (n_tx, n_ft, n_ch))
        return cls(tx, ft, ch)


@dataclass(frozen=True)
class Features:
    """Physics factors that can be switched off for ablation."""

    directivity: bool = True
    element_gain: bool = True
    spread: bool = True
    absorption: bool = True
    waveform_deformation: bool = True
    initial_time_offset: bool = True
    tgc: bool = True

    def without(self, name: str) -> "Features":
        if name not in {f.name for f in fields(self)}:
            raise ValidationError(f"unknown feature {name!r}")
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw[name] = False
        return Features(**kw)

    @classmethod
    def none(cls) -> "Features":
        return cls(*([False] * len(fields(cls))))


#: Ablation rows in report order: label and the feature that is switched off.
ABLATIONS = (
    ("None", None),
    ("Element Directivity", "directivity"),
    ("Element Gain", "element_gain"),
    ("Attenuation from Spread", "spread"),
    ("Attenuation from Absorption", "absorption"),
    ("Waveform Deformation", "waveform_deformation"),
    ("Initial Time Offset", "initial_time_offset"),
    ("Time Gain Compensation", "tgc"),
)


# --------------------------------------------------------------------------
# scalar physics factors


def travel_time(p_a, p_b, c: float) -> float:
    if not c > 0:
        raise ValidationError("speed of sound must be positive")
    return float(np.linalg.norm(np.subtract(p_a, p_b))) / c


def directivity(theta, elw: float, wavelength: float):
    """Element sensitivity ``sinc(elw sin(theta) / lambda) cos(theta)``."""
    return np.sinc(elw * np.sin(theta) / wavelength) * np.cos(theta)


def attenuation_absorption(d_tx, d_rx, f_c: float, mu: float):
    return 10.0 ** (-(mu / 20.0) * f_c * 1e-6 * 100.0 * (np.asarray(d_tx) + np.asarray(d_rx)))


def attenuation_spread(d, r: float):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise NumericalError("scatterer coincides with element")
    return r / d


def _dsinc(x):
    """Derivative of the normalized sinc."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    nz = x != 0
    xn = x[nz]
    out[nz] = (np.cos(np.pi * xn) - np.sinc(xn)) / xn
    return out


# --------------------------------------------------------------------------
# waveform bank


class WaveformBank:
    """Pre-filtered copies of each transmit waveform.

    Variant 0 is the unfiltered waveform; variant k is low-pass filtered with
    a linear-phase windowed-sinc FIR at ``cutoffs[k] * rf_fs / 2``. Cutoffs
    are geometrically spaced from 1 down to `min_cutoff` (fractions of the RF
    Nyquist frequency). All variants share the sample grid
    ``t_start + j / fs``.
    """

    def __init__(self, variants: np.ndarray, cutoffs: np.ndarray, fs: float, t_start: float):
        variants = np.asarray(variants, dtype=float)
        if variants.ndim == 2:
            variants = variants[None]
        self.variants = variants  # (n_tx, K, L)
        self.cutoffs = np.asarray(cutoffs, dtype=float)
        self.fs = float(fs)
        self.t_start = float(t_start)
        if self.variants.shape[2] < 2:
            raise ValidationError("waveform needs at least 2 samples")
        if np.any(np.diff(self.cutoffs) >= 0):
            raise ValidationError("cutoffs must be strictly decreasing")
        k = self.cutoffs.size
        self._log_ratio = math.log(self.cutoffs[-1]) if k > 1 else -1.0
        self.variants.setflags(write=False)

    @property
    def n_variants(self) -> int:
        return self.variants.shape[1]

    @property
    def length(self) -> int:
        return self.variants.shape[2]

    @classmethod
    def from_waveforms(cls, waveforms, waveform_fs: float, rf_fs: float,
                       n_variants: int = BANK_SIZE, min_cutoff: float = BANK_MIN_CUTOFF):
        n = max(len(w) for w in waveforms)
        base = np.zeros((len(waveforms), n))
        for i, w in enumerate(waveforms):
            base[i, : len(w)] = w
        cutoffs = min_cutoff ** (np.arange(n_variants) / max(n_variants - 1, 1))
        if n_variants == 1:
            return cls(base[:, None, :], cutoffs[:1], waveform_fs, 0.0)
        f_low = min_cutoff * rf_fs / 2
        half = int(math.ceil(waveform_fs / f_low))
        padded = np.pad(base, ((0, 0), (half, half)))
        variants = np.empty((base.shape[0], n_variants, padded.shape[1]))
        variants[:, 0] = padded
        for k in range(1, n_variants):
            f_cut = cutoffs[k] * rf_fs / 2
            if f_cut >= waveform_fs / 2:
                variants[:, k] = padded
                continue
            taps = firwin(2 * half + 1, f_cut, fs=waveform_fs)
            for i in range(base.shape[0]):
                variants[i, k] = np.convolve(padded[i], taps, mode="same")
        peak = np.max(np.abs(base))
        keep = np.flatnonzero(np.any(np.abs(variants) > BANK_TRIM_TOL * peak, axis=(0, 1)))
        lo, hi = (keep[0], keep[-1] + 1) if keep.size else (0, variants.shape[2])
        lo = max(0, lo - 1)
        hi = min(variants.shape[2], hi + 1)
        t_start = (lo - half) / waveform_fs
        return cls(variants[:, :, lo:hi], cutoffs, waveform_fs, t_start)

    def fractional_index(self, omega):
        """Fractional variant index for a normalized cutoff, and its derivative."""
        omega = np.asarray(omega, dtype=float)
        k = self.n_variants
        if k == 1:
            return np.zeros_like(omega), np.zeros_like(omega)
        lo = self.cutoffs[-1]
        inside = (omega < 1.0) & (omega > lo)
        w = np.clip(omega, lo, 1.0)
        f = np.log(w) / self._log_ratio * (k - 1)
        df = np.where(inside, (k - 1) / (np.where(inside, w, 1.0) * self._log_ratio), 0.0)
        return np.clip(f, 0.0, k - 1.0), df

    def lookup(self, tx, q, omega=None):
        """Evaluate the deformed waveform.

        Args:
            tx: transmit index per element of `q` (broadcastable).
            q: time relative to the firing instant.
            omega: effective normalized cutoff; None selects variant 0.

        Returns:
            value, d value / d q, d value / d omega
        """
        u = (q - self.t_start) * self.fs
        n = self.length
        valid = (u >= 0) & (u <= n - 1)
        j = np.clip(np.floor(u), 0, n - 2).astype(np.int64)
        a = u - j
        bank = self.variants
        tx = np.broadcast_to(tx, u.shape)
        if omega is None or self.n_variants == 1:
            w0 = bank[tx, 0, j]
            w1 = bank[tx, 0, j + 1]
            val = np.where(valid, w0 + a * (w1 - w0), 0.0)
            dq = np.where(valid, (w1 - w0) * self.fs, 0.0)
            return val, dq, np.zeros_like(val)
        f, df = self.fractional_index(omega)
        k = np.clip(np.floor(f), 0, self.n_variants - 2).astype(np.int64)
        b = f - k
        lo0 = bank[tx, k, j]
        lo1 = bank[tx, k, j + 1]
        hi0 = bank[tx, k + 1, j]
        hi1 = bank[tx, k + 1, j + 1]
        v_lo = lo0 + a * (lo1 - lo0)
        v_hi = hi0 + a * (hi1 - hi0)
        val = np.where(valid, v_lo + b * (v_hi - v_lo), 0.0)
        slope = (1 - b) * (lo1 - lo0) + b * (hi1 - hi0)
        dq = np.where(valid, slope * self.fs, 0.0)
        dw = np.where(valid, (v_hi - v_lo) * df, 0.0)
        return val, dq, dw

    def segments(self, q, omega=None):
        """Interpolation cell of every lookup; used to keep finite differences inside one cell."""
        u = (q - self.t_start) * self.fs
        j = np.where((u >= 0) & (u <= self.length - 1), np.floor(u), -1)
        if omega is None:
            return j
        f, _ = self.fractional_index(omega)
        return j * self.n_variants + np.floor(f)


@lru_cache(maxsize=16)
def _bank_for(scheme: TransmitScheme, rf_fs: float, n_variants: int, min_cutoff: float):
    return WaveformBank.from_waveforms(scheme.waveforms, scheme.waveform_fs, rf_fs,
                                       n_variants, min_cutoff)


def waveform_value(bank: WaveformBank, t: float, round_trip_time: float,
                   xi_a: float, xi_b: float, tx: int = 0) -> float:
    """Deformed waveform at time `t` after firing, for a given round-trip time."""
    if xi_a < 0 or xi_b < 0:
        raise ValidationError("low-pass parameters must be nonnegative")
    omega = xi_a - xi_b * round_trip_time
    val, _, _ = bank.lookup(np.asarray(tx), np.asarray(float(t)), np.asarray(omega))
    return float(val)


# --------------------------------------------------------------------------
# forward model


@dataclass
class PhysicalGradient:
    """Gradient of a scalar with respect to every physical model input."""

    positions: np.ndarray
    amplitudes: np.ndarray
    speed_of_sound: float = 0.0
    attenuation_coeff: float = 0.0
    element_width: float = 0.0
    element_gain: np.ndarray = None
    initial_time_offset: float = 0.0
    lowpass_intercept: float = 0.0
    lowpass_slope: float = 0.0


class _Side:
    """Per-(element, scatterer) geometry for one side of the round trip."""

    def __init__(self, ex, ez, pos, apod, k_dir, k_abs, r, feats):
        dx = pos[0] - ex
        dz = pos[1] - ez
        d = np.hypot(dx, dz)
        if np.any(d == 0):
            raise NumericalError("scatterer coincides with element")
        self.d = d
        self.s = dx / d
        self.co = dz / d
        self.k_dir = k_dir
        if feats.directivity:
            x = k_dir * self.s
            self.sinc = np.sinc(x)
            self.dsinc = _dsinc(x)
            self.b = self.sinc * self.co
        else:
            self.b = np.ones_like(d)
        g = np.broadcast_to(np.asarray(apod, dtype=float), d.shape).copy()
        self.dlng_dd = np.zeros_like(d)
        if feats.spread:
            g *= r / d
            self.dlng_dd -= 1.0 / d
        if feats.absorption:
            g *= np.exp(-k_abs * d)
            self.dlng_dd -= k_abs
        self.g = g
        self.factor = g * self.b
        self.feats = feats

    def backprop(self, dF, dD, grad_pos, acc):
        """Chain cotangents of the side factor (`dF`) and distance (`dD`) to inputs.

        `grad_pos` has shape (2, n_sc); `acc` collects scalar gradients.
        """
        dd = dD + dF * self.factor * self.dlng_dd
        gx = dd * self.s
        gz = dd * self.co
        if self.feats.directivity:
            db = dF * self.g
            db_ds = self.k_dir * self.dsinc * self.co
            db_dco = self.sinc
            ds_x = self.co ** 2 / self.d
            ds_z = -self.s * self.co / self.d
            dco_x = ds_z
            dco_z = self.s ** 2 / self.d
            gx = gx + db * (db_ds * ds_x + db_dco * dco_x)
            gz = gz + db * (db_ds * ds_z + db_dco * dco_z)
            acc["k_dir"] += float(np.sum(db * self.s * self.dsinc * self.co))
        if self.feats.absorption:
            acc["k_abs"] -= float(np.sum(dF * self.factor * self.d))
        axes = tuple(range(gx.ndim - 1))
        grad_pos[0] += gx.sum(axis=axes)
        grad_pos[1] += gz.sum(axis=axes)


class ForwardModel:
    """Forward model bound to one acquisition.

    Args:
        geometry: transducer.
        scheme: transmit scheme.
        tgc_curve: per fast-time gain, defaults to ones.
        model_kind: ``"full"`` or ``"wavefront"``.
        features: physics factors to include.
    """

    def __init__(self, geometry: TransducerGeometry, scheme: TransmitScheme,
                 tgc_curve=None, model_kind: str = "full", features: Features = Features(),
                 bank_size: int = BANK_SIZE, min_cutoff: float = BANK_MIN_CUTOFF):
        if model_kind not in MODEL_KINDS:
            raise ValidationError(f"model_kind must be one of {MODEL_KINDS}")
        self.geometry = geometry
        self.scheme = scheme
        self.model_kind = model_kind
        self.features = features
        self.tgc = np.ones(scheme.n_fast_time) if tgc_curve is None else np.asarray(tgc_curve, float)
        self.bank = _bank_for(scheme, geometry.sampling_frequency, bank_size, min_cutoff)
        self.shape = (scheme.n_tx, scheme.n_fast_time, geometry.n_ch)
        # firing elements per transmit, padded with apodization 0
        firing = [scheme.firing(t) for t in range(scheme.n_tx)]
        m = max(len(f) for f in firing)
        self._fire_idx = np.zeros((scheme.n_tx, m), dtype=np.int64)
        self._fire_apod = np.zeros((scheme.n_tx, m))
        for t, f in enumerate(firing):
            self._fire_idx[t, : len(f)] = f
            self._fire_apod[t, : len(f)] = scheme.apodization[t, f]

    # -- tables -------------------------------------------------------------

    def _tables(self, field: ScattererField, params: ModelParams):
        geo, sch, feats = self.geometry, self.scheme, self.features
        c = params.speed_of_sound
        pos = field.positions
        k_dir = params.element_width * geo.center_frequency / c
        k_abs = params.attenuation_coeff * geo.center_frequency * _DB_CM_MHZ
        r = params.scatterer_radius
        ex, ez = geo.element_positions
        # transmit side: (n_tx, m, n_sc)
        idx = self._fire_idx
        apod = self._fire_apod
        psi = sch.delays[np.arange(sch.n_tx)[:, None], idx]
        ptx = pos[:, None, None, :]
        if self.model_kind == "wavefront":
            d_all = np.hypot(ptx[0] - ex[idx][..., None], ptx[1] - ez[idx][..., None])
            arrival = d_all / c + psi[..., None]
            arrival = np.where(apod[..., None] > 0, arrival, np.inf)
            best = np.argmin(arrival, axis=1)  # ties -> lowest index
            sel = np.take_along_axis(idx[..., None] * np.ones_like(best[:, None]), best[:, None], axis=1)
            idx_full = sel  # (n_tx, 1, n_sc)
            apod_full = np.take_along_axis(apod[..., None] * np.ones_like(best[:, None], dtype=float),
                                           best[:, None], axis=1)
            psi_full = sch.delays[np.arange(sch.n_tx)[:, None, None], idx_full]
        else:
            idx_full = np.broadcast_to(idx[..., None], idx.shape + (field.n_sc,))
            apod_full = apod[..., None]
            psi_full = np.broadcast_to(psi[..., None], idx_full.shape)
        tx_side = _Side(ex[idx_full], ez[idx_full], pos[:, None, None, :], apod_full,
                        k_dir, k_abs, r, feats)
        rx_side = _Side(ex[:, None], ez[:, None], pos[:, None, :], 1.0, k_dir, k_abs, r, feats)
        return tx_side, rx_side, np.ascontiguousarray(psi_full)

    def _timing(self, params):
        t0 = params.initial_time_offset if self.features.initial_time_offset else 0.0
        gain = params.element_gain if self.features.element_gain else np.ones(self.geometry.n_ch)
        tgc = self.tgc if self.features.tgc else np.ones_like(self.tgc)
        return t0, gain, tgc

    def _chunks(self, n, per_sample):
        step = max(1, _CHUNK_ELEMENTS // max(per_sample, 1))
        return [slice(i, min(n, i + step)) for i in range(0, n, step)]

    def _map(self, fn, chunks):
        workers = n_threads()
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(workers) as ex:
                return list(ex.map(fn, chunks))
        return [fn(c) for c in chunks]

    def _terms(self, batch, sl, tx_side, rx_side, psi, field, params, t0):
        tx, ft, ch = batch.tx[sl], batch.ft[sl], batch.ch[sl]
        c = params.speed_of_sound
        geo = self.geometry
        A = tx_side.d[tx] + rx_side.d[ch][:, None, :]
        tau = A / c
        t = ft / geo.sampling_frequency + self.scheme.initial_time + t0
        q = t[:, None, None] - tau - psi[tx]
        if self.features.waveform_deformation:
            omega = params.lowpass_intercept - params.lowpass_slope * tau
        else:
            omega = None
        phi, dphi_q, dphi_w = self.bank.lookup(tx[:, None, None], q, omega)
        gain = tx_side.factor[tx] * rx_side.factor[ch][:, None, :]
        return A, tau, q, omega, phi, dphi_q, dphi_w, gain

    # -- public API ---------------------------------------------------------

    def predict(self, batch: SampleIndex, field: ScattererField, params: ModelParams) -> np.ndarray:
        """Predicted RF value for every sample of `batch`."""
        batch = batch.as_arrays()
        tx_side, rx_side, psi = self._tables(field, params)
        t0, gain_ch, tgc = self._timing(params)
        amp = field.amplitudes

        def run(sl):
            *_, phi, _, _, gain = self._terms(batch, sl, tx_side, rx_side, psi, field, params, t0)
            inner = np.einsum("bms,s->b", phi * gain, amp)
            return inner * tgc[batch.ft[sl]] * gain_ch[batch.ch[sl]]

        per = psi.shape[1] * field.n_sc
        out = self._map(run, self._chunks(batch.size, per))
        return np.concatenate(out) if out else np.zeros(0)

    def predict_cube(self, field: ScattererField, params: ModelParams) -> np.ndarray:
        return self.predict(SampleIndex.full_cube(*self.shape), field, params).reshape(self.shape)

    def vjp(self, batch: SampleIndex, cotangent, field: ScattererField, params: ModelParams):
        """Predictions and the gradient of ``sum(cotangent * prediction)``.

        `cotangent` is an array over the batch, or a callable
        ``(prediction_chunk, batch_slice) -> cotangent_chunk`` so that a loss
        gradient needs a single pass.

        Returns:
            (prediction, PhysicalGradient)
        """
        batch = batch.as_arrays()
        if callable(cotangent):
            cot_of = cotangent
        else:
            cot_all = np.asarray(cotangent, dtype=float)

            def cot_of(pred, sl):
                return cot_all[sl]
        tx_side, rx_side, psi = self._tables(field, params)
        t0, gain_ch, tgc = self._timing(params)
        amp = field.amplitudes
        c = params.speed_of_sound
        lb = params.lowpass_slope
        n_tx, m, n_sc = psi.shape
        n_ch = self.geometry.n_ch

        def run(sl):
            tx, ft, ch = batch.tx[sl], batch.ft[sl], batch.ch[sl]
            A, tau, q, omega, phi, dq, dw, gain = self._terms(
                batch, sl, tx_side, rx_side, psi, field, params, t0)
            scale = tgc[ft] * gain_ch[ch]
            pg = phi * gain
            inner = np.einsum("bms,s->b", pg, amp)
            pred = inner * scale
            cot = cot_of(pred, sl)
            G = cot * scale
            out = {
                "pred": pred,
                "gamma": np.bincount(ch, weights=cot * tgc[ft] * inner, minlength=n_ch),
                "amp": np.einsum("b,bms->s", G, pg),
            }
            H = G[:, None, None] * gain * amp
            Hq = H * dq
            dA = -Hq / c
            timing = Hq
            if omega is not None:
                Hw = H * dw
                dA = dA - Hw * (lb / c)
                timing = Hq + Hw * lb
                out["lp_a"] = float(Hw.sum())
                out["lp_b"] = float(-(Hw * tau).sum())
            out["c"] = float((timing * A).sum()) / c ** 2
            out["t0"] = float(Hq.sum())
            E = G[:, None, None] * amp * phi
            dtxf = np.zeros((n_tx, m, n_sc))
            dtxd = np.zeros((n_tx, m, n_sc))
            rxf_b = rx_side.factor[ch][:, None, :]
            txf_b = tx_side.factor[tx]
            ex_r = (E * rxf_b)
            for t in np.unique(tx):
                mask = tx == t
                dtxf[t] += ex_r[mask].sum(axis=0)
                dtxd[t] += dA[mask].sum(axis=0)
            drxf = np.zeros((n_ch, n_sc))
            drxd = np.zeros((n_ch, n_sc))
            np.add.at(drxf, ch, (E * txf_b).sum(axis=1))
            np.add.at(drxd, ch, dA.sum(axis=1))
            out.update(dtxf=dtxf, dtxd=dtxd, drxf=drxf, drxd=drxd)
            return out

        parts = self._map(run, self._chunks(batch.size, m * n_sc))
        pred = np.concatenate([p["pred"] for p in parts])

        def total(key):
            # fixed chunk order keeps the reduction deterministic
            acc = parts[0].get(key, 0.0)
            for p in parts[1:]:
                acc = acc + p.get(key, 0.0)
            return acc

        grad = PhysicalGradient(positions=np.zeros((2, n_sc)), amplitudes=total("amp"))
        acc = {"k_dir": 0.0, "k_abs": 0.0}
        tx_side.backprop(total("dtxf"), total("dtxd"), grad.positions, acc)
        rx_side.backprop(total("drxf"), total("drxd"), grad.positions, acc)
        f_c = self.geometry.center_frequency
        k_dir = params.element_width * f_c / c
        grad.speed_of_sound = total("c") - acc["k_dir"] * k_dir / c
        grad.element_width = acc["k_dir"] * f_c / c
        grad.attenuation_coeff = acc["k_abs"] * f_c * _DB_CM_MHZ
        g_gamma = total("gamma")
        grad.element_gain = g_gamma if self.features.element_gain else np.zeros(n_ch)
        grad.initial_time_offset = total("t0") if self.features.initial_time_offset else 0.0
        grad.lowpass_intercept = total("lp_a")
        grad.lowpass_slope = total("lp_b")
        return pred, grad

    def segments(self, batch: SampleIndex, field: ScattererField, params: ModelParams):
        """Discrete state of every piecewise-linear choice (cells and arg-min elements)."""
        batch = batch.as_arrays()
        tx_side, rx_side, psi = self._tables(field, params)
        t0, _, _ = self._timing(params)
        sl = slice(0, batch.size)
        A, tau, q, omega, *_ = self._terms(batch, sl, tx_side, rx_side, psi, field, params, t0)
        cells = self.bank.segments(q, omega)
        if self.model_kind == "wavefront":
            return np.concatenate([cells.ravel(), psi.ravel()])
        return cells.ravel()


# --------------------------------------------------------------------------
# functional wrappers


def predict_batch(indices: SampleIndex, field: ScattererField, params: ModelParams,
                  geometry: TransducerGeometry, scheme: TransmitScheme, tgc_curve=None,
                  model_kind: str = "full", features: Features = Features()) -> np.ndarray:
    model = ForwardModel(geometry, scheme, tgc_curve, model_kind, features)
    return model.predict(indices, field, params)


def predict_sample_full(idx: SampleIndex, field, params, geometry, scheme, tgc_curve=None,
                        features: Features = Features()) -> float:
    return float(predict_batch(SampleIndex(*idx), field, params, geometry, scheme,
                               tgc_curve, "full", features)[0])


def predict_sample_wavefront(idx: SampleIndex, field, params, geometry, scheme, tgc_curve=None,
                             features: Features = Features()) -> float:
    return float(predict_batch(SampleIndex(*idx), field, params, geometry, scheme,
                               tgc_curve, "wavefront", features)[0])
