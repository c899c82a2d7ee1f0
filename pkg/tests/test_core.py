import numpy as np
import pytest

from offgrid.core import (ModelParams, RFDataCube, ScattererField, TransducerGeometry, TransmitScheme,
                          ValidationError, validate_acquisition)


def _scheme(n_tx=2, n_ch=4, n_ft=16, delays=None):
    delays = np.zeros((n_tx, n_ch)) if delays is None else delays
    apod = np.zeros((n_tx, n_ch))
    apod[:, 0] = 1.0
    wave = np.sin(np.linspace(0, 2 * np.pi, 9))
    return TransmitScheme(delays, apod, tuple(wave for _ in range(n_tx)), 80e6, 0.0, n_ft)


def test_consistent_acquisition_has_empty_report():
    geo = TransducerGeometry.linear(4, 3e-4)
    data = RFDataCube(np.zeros((2, 16, 4)))
    assert validate_acquisition(geo, _scheme(), data) == []


def test_delays_not_zero_anchored_is_flagged():
    geo = TransducerGeometry.linear(4, 3e-4)
    delays = np.zeros((2, 4))
    delays[0] += 1e-6
    report = validate_acquisition(geo, _scheme(delays=delays))
    assert any("delays not zero-anchored" in r for r in report)


def test_channel_mismatch_is_flagged():
    geo = TransducerGeometry.linear(4, 3e-4)
    data = RFDataCube(np.zeros((2, 16, 3)))
    report = validate_acquisition(geo, _scheme(), data)
    assert any("shape mismatch" in r for r in report)


def test_validation_is_pure():
    geo = TransducerGeometry.linear(4, 3e-4)
    delays = np.full((2, 4), 1e-6)
    s = _scheme(delays=delays)
    assert validate_acquisition(geo, s) == validate_acquisition(geo, s)


def test_geometry_problems():
    geo = TransducerGeometry(np.array([[0.0, 1e-3], [0.0, 1e-4]]), 2e-4, 5e6, 8e6)
    report = geo.problems()
    assert any("x-axis" in r for r in report)
    assert any("twice the center frequency" in r for r in report)


def test_types_are_read_only():
    f = ScattererField(np.zeros((2, 1)) + 1e-3, np.ones(1))
    with pytest.raises(ValueError):
        f.amplitudes[0] = 2.0


def test_negative_amplitude_rejected():
    assert ScattererField(np.ones((2, 1)), np.array([-1.0])).problems()


def test_model_params_range_checks(geometry):
    p = ModelParams(1700.0, 0.5, geometry.element_width, np.full(geometry.n_ch, 0.4))
    report = p.problems()
    assert "speed of sound outside bounds" in report
    assert "element gain outside [0.5, 1]" in report


def test_rf_cube_requires_3d():
    with pytest.raises(ValidationError):
        RFDataCube(np.zeros((4, 4)))


def test_tgc_must_be_positive():
    cube = RFDataCube(np.zeros((1, 3, 2)), np.array([1.0, 0.0, 1.0]))
    assert any("TGC" in r for r in cube.problems())
