import warnings

import numpy as np
import pytest

from offgrid.core import ScattererField, ValidationError
from offgrid.forward import ForwardModel
from offgrid.phantom import (Cyst, SceneSpec, Wire, gaussian_pulse, gen_phantom, make_scheme, simulate_rf,
                             tgc_from_db)


def test_anechoic_cyst_is_empty():
    spec = SceneSpec(cysts=[Cyst(0.0, 12e-3, 2e-3, 0.0)])
    f = gen_phantom(spec, np.random.default_rng(0))
    inside = Cyst(0.0, 12e-3, 2e-3).contains(f.positions)
    assert not np.any(inside & (f.amplitudes > 0))
    assert np.all(f.amplitudes > 0)


def test_hyperechoic_cyst_scales_amplitudes():
    spec = SceneSpec(cysts=[Cyst(0.0, 12e-3, 2e-3, 3.0)])
    f = gen_phantom(spec, np.random.default_rng(1))
    inside = Cyst(0.0, 12e-3, 2e-3).contains(f.positions)
    assert np.all(f.amplitudes[inside] >= 1.5) and np.all(f.amplitudes[~inside] <= 1.0)


def test_wires_are_appended():
    f = gen_phantom(SceneSpec(density=0.0, wires=[Wire(1e-3, 10e-3, 7.0)]), np.random.default_rng(0))
    np.testing.assert_array_equal(f.positions[:, -1], [1e-3, 10e-3])
    assert f.amplitudes[-1] == 7.0


def test_same_seed_same_field():
    a = gen_phantom(SceneSpec(), np.random.default_rng(5))
    b = gen_phantom(SceneSpec(), np.random.default_rng(5))
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.amplitudes, b.amplitudes)


def test_poisson_count():
    spec = SceneSpec(density=3.0)
    mean = spec.density * spec.area_mm2()
    counts = [gen_phantom(spec, np.random.default_rng(s)).n_sc for s in range(20)]
    assert np.all(np.abs(np.array(counts) - mean) < 3 * np.sqrt(mean))
    assert abs(np.mean(counts) - mean) < 3 * np.sqrt(mean / 20)


def test_overlapping_regions_warn_last_wins():
    spec = SceneSpec(cysts=[Cyst(0.0, 12e-3, 2e-3, 0.0), Cyst(0.5e-3, 12e-3, 2e-3, 2.0)])
    with pytest.warns(UserWarning, match="last region wins"):
        f = gen_phantom(spec, np.random.default_rng(2))
    both = Cyst(0.0, 12e-3, 2e-3).contains(f.positions) & Cyst(0.5e-3, 12e-3, 2e-3).contains(f.positions)
    assert not np.any(both)  # anechoic first region removed them before the second scaled anything


def test_bad_extent():
    with pytest.raises(ValidationError):
        gen_phantom(SceneSpec(extent=(0, 1e-3, -1e-3, 1e-3)), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        gen_phantom(SceneSpec(cysts=[Cyst(1.0, 1.0, 1e-3)]), np.random.default_rng(0))


def test_noiseless_simulation_equals_prediction(geometry, scheme, field, params):
    tgc = tgc_from_db([0, 20], 384)
    rf = simulate_rf(field, params, geometry, scheme, tgc_curve=tgc)
    np.testing.assert_array_equal(rf.samples, ForwardModel(geometry, scheme, tgc).predict_cube(field, params))
    np.testing.assert_array_equal(rf.tgc_curve, tgc)


def test_noise_variance_follows_tgc(geometry, scheme, params):
    silent = ScattererField(np.array([[0.0], [8e-3]]), np.zeros(1))
    tgc = tgc_from_db([0, 12], 384)
    rf = simulate_rf(silent, params, geometry, scheme, 1.0, np.random.default_rng(0), tgc_curve=tgc)
    ratio = rf.samples / tgc[None, :, None]
    assert np.var(ratio) == pytest.approx(1.0, rel=0.05)
    assert np.mean(rf.samples ** 2) == pytest.approx(np.mean(tgc ** 2), rel=0.05)


def test_noise_seed_changes_only_additive_part(geometry, scheme, field, params):
    a = simulate_rf(field, params, geometry, scheme, 1e-9, np.random.default_rng(1))
    b = simulate_rf(field, params, geometry, scheme, 1e-9, np.random.default_rng(2))
    clean = simulate_rf(field, params, geometry, scheme)
    d = (a.samples - clean.samples) / 1e-9
    assert abs(d.mean()) < 4 / np.sqrt(d.size) and np.std(d) == pytest.approx(1.0, rel=0.05)
    assert not np.array_equal(a.samples, b.samples)


def test_noise_requires_rng(geometry, scheme, field, params):
    with pytest.raises(ValidationError):
        simulate_rf(field, params, geometry, scheme, 1.0)


def test_gaussian_pulse_bandwidth():
    pulse, t_c = gaussian_pulse(5e6, 0.6, 160e6)
    spec = np.abs(np.fft.rfft(pulse, 1 << 14))
    f = np.fft.rfftfreq(1 << 14, 1 / 160e6)
    band = f[spec >= spec.max() / 2]
    assert (band.max() - band.min()) / 5e6 == pytest.approx(0.6, rel=0.03)
    assert f[spec.argmax()] == pytest.approx(5e6, rel=0.02)


def test_schemes(geometry):
    sa = make_scheme(geometry, "sa", n_tx=3)
    assert all(len(sa.firing(t)) == 1 for t in range(3))
    pw = make_scheme(geometry, "plane", n_tx=2, angles=[0.0, 0.1])
    assert np.all(pw.delays.min(axis=1) == 0) and pw.delays[1].max() > 0
    assert make_scheme(geometry, "group", n_tx=1, elements=[1, 4]).firing(0).tolist() == [1, 4]
    with pytest.raises(ValidationError):
        make_scheme(geometry, "fan")


def test_tgc_curve():
    tgc = tgc_from_db([0, 20, 40], 5)
    np.testing.assert_allclose(20 * np.log10(tgc), [0, 10, 20, 30, 40])
