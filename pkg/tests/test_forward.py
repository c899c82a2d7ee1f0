import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from offgrid.core import ModelParams, NumericalError, ScattererField, ValidationError
from offgrid.forward import (ABLATIONS, BANK_SIZE, Features, ForwardModel, SampleIndex, WaveformBank,
                             attenuation_absorption, attenuation_spread, directivity, predict_batch,
                             predict_sample_full, predict_sample_wavefront, travel_time, waveform_value)
from offgrid.phantom import make_scheme, tgc_from_db

finite = st.floats(-1e-2, 1e-2, allow_nan=False)


# -- scalar factors ----------------------------------------------------------

def test_travel_time_examples():
    assert travel_time([1e-3, 2e-3], [1e-3, 2e-3], 1540.0) == 0.0
    assert travel_time([0.0, 0.0], [0.0, 1.54e-3], 1540.0) == pytest.approx(1e-6, rel=1e-15)


@given(finite, finite, finite, finite)
def test_travel_time_symmetric(ax, az, bx, bz):
    assert travel_time([ax, az], [bx, bz], 1540.0) == travel_time([bx, bz], [ax, az], 1540.0)


def test_directivity_examples():
    lam = 3.08e-4
    assert directivity(0.0, lam, lam) == 1.0
    assert abs(directivity(math.pi / 2, lam, lam)) < 1e-15
    # sin(pi/4)/(pi/4) * cos(pi/6), evaluated independently
    expected = math.sin(math.pi / 4) / (math.pi / 4) * math.sqrt(3) / 2
    assert directivity(math.pi / 6, lam / 2, lam) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.7797, abs=1e-4)


@given(st.floats(-1.5, 1.5))
def test_directivity_symmetric(theta):
    assert directivity(theta, 2.7e-4, 3.08e-4) == directivity(-theta, 2.7e-4, 3.08e-4)


def test_absorption_examples():
    assert attenuation_absorption(0.01, 0.02, 5e6, 0.0) == 1.0
    assert attenuation_absorption(0.0, 0.0, 5e6, 0.5) == 1.0
    # 0.5 dB/cm/MHz * 5 MHz * 2 cm = 5 dB
    assert attenuation_absorption(0.01, 0.01, 5e6, 0.5) == pytest.approx(10 ** -0.25, rel=1e-12)


@given(st.floats(0, 0.05), st.floats(1e-6, 0.05))
def test_absorption_strictly_decreasing(d, delta):
    assert attenuation_absorption(d + delta, 0.0, 5e6, 0.5) < attenuation_absorption(d, 0.0, 5e6, 0.5)


def test_spread_examples():
    assert attenuation_spread(1e-6, 1e-6) == 1.0
    assert attenuation_spread(2e-6, 1e-6) == 0.5
    assert attenuation_spread(1e-2, 1e-6) == pytest.approx(1e-4, rel=1e-15)
    with pytest.raises(NumericalError, match="coincides"):
        attenuation_spread(0.0, 1e-6)


# -- waveform bank ------------------------------------------------------------

@pytest.fixture
def bank():
    w = np.sin(np.linspace(0, 3 * np.pi, 40)) * np.hanning(40)
    return WaveformBank.from_waveforms([w], 160e6, 20e6)


def test_bank_invariants(bank):
    assert bank.n_variants == BANK_SIZE
    assert bank.cutoffs[0] == 1.0
    assert np.all(np.diff(bank.cutoffs) < 0)
    # variant 0 is the base waveform on the shared grid
    w = np.sin(np.linspace(0, 3 * np.pi, 40)) * np.hanning(40)
    j0 = int(round(-bank.t_start * bank.fs))
    np.testing.assert_array_equal(bank.variants[0, 0, j0:j0 + 40], w)


def test_waveform_before_support_is_zero(bank):
    assert waveform_value(bank, bank.t_start - 1e-7, 0.0, 1.0, 0.0) == 0.0


def test_waveform_on_grid_node(bank):
    k, j = 3, 25
    t = bank.t_start + j / bank.fs
    assert waveform_value(bank, t, 0.0, bank.cutoffs[k], 0.0) == pytest.approx(bank.variants[0, k, j], abs=1e-14)


def test_waveform_midpoint_is_mean(bank):
    j = 20
    t = bank.t_start + (j + 0.5) / bank.fs
    v = bank.variants[0, 0]
    assert waveform_value(bank, t, 0.0, 1.0, 0.0) == pytest.approx(0.5 * (v[j] + v[j + 1]), abs=1e-14)


def test_waveform_cutoff_clamps(bank):
    t = bank.t_start + 22 / bank.fs
    assert waveform_value(bank, t, 0.0, 5.0, 0.0) == waveform_value(bank, t, 0.0, 1.0, 0.0)
    assert waveform_value(bank, t, 1e-5, 0.5, 1e6) == waveform_value(bank, t, 0.0, 1e-3, 0.0)


# -- predictions -------------------------------------------------------------

def _loop_oracle(ft, ch, tx, field, params, geo, sch, tgc, bank):
    """Direct per-term evaluation of the full model for one sample."""
    c = params.speed_of_sound
    lam = c / geo.center_frequency
    f_c = geo.center_frequency
    t = ft / geo.sampling_frequency + sch.initial_time + params.initial_time_offset
    ex = geo.element_positions[0]
    total = 0.0
    for e in sch.firing(tx):
        for s in range(field.n_sc):
            px, pz = field.positions[:, s]
            d_tx = math.hypot(px - ex[e], pz)
            d_rx = math.hypot(px - ex[ch], pz)
            th_tx = math.asin((px - ex[e]) / d_tx)
            th_rx = math.asin((px - ex[ch]) / d_rx)
            b = directivity(th_tx, params.element_width, lam) * directivity(th_rx, params.element_width, lam)
            att = attenuation_absorption(d_tx, d_rx, f_c, params.attenuation_coeff)
            spread = attenuation_spread(d_tx, params.scatterer_radius) * attenuation_spread(d_rx, params.scatterer_radius)
            rt = (d_tx + d_rx) / c
            q = t - rt - sch.delays[tx, e]
            wv = waveform_value(bank, q, rt, params.lowpass_intercept, params.lowpass_slope, tx)
            total += sch.apodization[tx, e] * field.amplitudes[s] * b * att * spread * wv
    return tgc[ft] * params.element_gain[ch] * total


def test_full_model_matches_loop_oracle(geometry, field, params):
    sch = make_scheme(geometry, "group", n_tx=1, n_ft=384, elements=[3, 9])
    tgc = tgc_from_db([0, 12], 384)
    model = ForwardModel(geometry, sch, tgc, "full")
    rng = np.random.default_rng(0)
    idx = SampleIndex.from_flat(rng.choice(384 * 16, 200, replace=False), 1, 384, 16)
    pred = model.predict(idx, field, params)
    oracle = [_loop_oracle(f, c, t, field, params, geometry, sch, tgc, model.bank)
              for t, f, c in zip(idx.tx, idx.ft, idx.ch)]
    assert np.max(np.abs(oracle)) > 0
    np.testing.assert_allclose(pred, oracle, rtol=1e-10, atol=1e-12 * np.max(np.abs(oracle)))


def test_bare_kernel_with_all_features_off(geometry, scheme):
    field = ScattererField(np.array([[0.4e-3], [7e-3]]), np.array([1.7]))
    params = ModelParams(1500.0, 0.7, 2e-4, np.full(16, 0.6), 3e-8, 0.5, 1e4)
    model = ForwardModel(geometry, scheme, tgc_from_db([0, 40], 384), "full", Features.none())
    e = scheme.firing(1)[0]
    w = scheme.waveforms[1]
    tw = np.arange(w.size) / scheme.waveform_fs
    ex = geometry.element_positions[0]
    for ch, ft in [(2, 150), (7, 160), (12, 175)]:
        tau = (math.hypot(0.4e-3 - ex[e], 7e-3) + math.hypot(0.4e-3 - ex[ch], 7e-3)) / 1500.0
        q = ft / geometry.sampling_frequency - tau
        expected = 1.7 * np.interp(q, tw, w, left=0.0, right=0.0)
        got = model.predict(SampleIndex(np.array([1]), np.array([ft]), np.array([ch])), field, params)[0]
        assert got == pytest.approx(expected, abs=1e-12)


def test_zero_amplitudes_predict_zero(geometry, scheme, params):
    f = ScattererField(np.array([[0.0], [8e-3]]), np.zeros(1))
    for kind in ("full", "wavefront"):
        assert not np.any(ForwardModel(geometry, scheme, None, kind).predict_cube(f, params))


@pytest.mark.parametrize("kind", ["full", "wavefront"])
def test_superposition_and_linearity(geometry, field, params, kind):
    sch = make_scheme(geometry, "group", n_tx=1, n_ft=384, elements=[2, 5, 13])
    model = ForwardModel(geometry, sch, None, kind)
    a = ScattererField(field.positions[:, :2], field.amplitudes[:2])
    b = ScattererField(field.positions[:, 2:], field.amplitudes[2:])
    whole = model.predict_cube(a.union(b), params)
    np.testing.assert_allclose(whole, model.predict_cube(a, params) + model.predict_cube(b, params),
                               rtol=1e-12, atol=1e-14 * np.abs(whole).max())
    scaled = ScattererField(field.positions, 2.5 * field.amplitudes)
    np.testing.assert_allclose(model.predict_cube(scaled, params), 2.5 * model.predict_cube(field, params),
                               rtol=1e-12, atol=1e-14 * np.abs(whole).max())


def test_single_element_transmits_models_agree(geometry, scheme, field, params):
    full = ForwardModel(geometry, scheme, None, "full").predict_cube(field, params)
    wave = ForwardModel(geometry, scheme, None, "wavefront").predict_cube(field, params)
    np.testing.assert_allclose(wave, full, rtol=1e-12, atol=0)


def test_wavefront_uses_first_arrival(geometry, params):
    sch = make_scheme(geometry, "group", n_tx=1, n_ft=384, elements=[0, 15])
    ex = geometry.element_positions[0]
    f = ScattererField(np.array([[ex[0] + 1e-4], [5e-3]]), np.array([1.0]))
    d = [math.hypot(f.positions[0, 0] - ex[e], 5e-3) for e in (0, 15)]
    nearest = int(np.argmin(d))
    assert nearest == 0
    single = make_scheme(geometry, "sa", n_tx=1, n_ft=384, elements=[0])
    wave = ForwardModel(geometry, sch, None, "wavefront").predict_cube(f, params)
    ref = ForwardModel(geometry, single, None, "full").predict_cube(f, params)
    np.testing.assert_allclose(wave, ref, rtol=1e-12, atol=0)


def test_batch_order_and_singletons(geometry, scheme, field, params):
    rng = np.random.default_rng(3)
    idx = SampleIndex.from_flat(rng.choice(2 * 384 * 16, 50, replace=False), 2, 384, 16)
    out = predict_batch(idx, field, params, geometry, scheme)
    perm = rng.permutation(50)
    out_p = predict_batch(SampleIndex(idx.tx[perm], idx.ft[perm], idx.ch[perm]), field, params, geometry, scheme)
    np.testing.assert_array_equal(out_p, out[perm])
    for i in range(0, 50, 7):
        one = (idx.tx[i : i + 1], idx.ft[i : i + 1], idx.ch[i : i + 1])
        assert predict_sample_full(one, field, params, geometry, scheme) == out[i]
        assert predict_sample_wavefront(one, field, params, geometry, scheme) == pytest.approx(out[i], rel=1e-12)


def test_cube_matches_single_samples(geometry, field, params):
    sch = make_scheme(geometry, "sa", n_tx=1, n_ft=64, initial_time=6e-6)
    cube = ForwardModel(geometry, sch).predict_cube(field, params)
    for ft in range(0, 64, 9):
        for ch in range(0, 16, 5):
            idx = (np.array([0]), np.array([ft]), np.array([ch]))
            assert predict_sample_full(idx, field, params, geometry, sch) == cube[0, ft, ch]


@pytest.mark.parametrize("label,feature", [a for a in ABLATIONS if a[1] is not None])
def test_each_feature_toggles_independently(geometry, field, params, label, feature):
    sch = make_scheme(geometry, "sa", n_tx=1, n_ft=384)
    tgc = tgc_from_db([0, 20], 384)
    params = params.replace(lowpass_intercept=0.3)
    on = ForwardModel(geometry, sch, tgc, "full").predict_cube(field, params)
    off = ForwardModel(geometry, sch, tgc, "full", Features().without(feature)).predict_cube(field, params)
    assert np.max(np.abs(on - off)) > 1e-3 * np.max(np.abs(on))


def test_unknown_feature_rejected():
    with pytest.raises(ValidationError):
        Features().without("speckle")


def test_scatterer_on_element_raises(geometry, scheme, params):
    f = ScattererField(geometry.element_positions[:, :1].copy(), np.ones(1))
    with pytest.raises(NumericalError, match="coincides"):
        ForwardModel(geometry, scheme).predict_cube(f, params)
