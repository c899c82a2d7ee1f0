import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from offgrid.core import ModelParams, ScattererField, TransducerGeometry, ValidationError
from offgrid.reparam import FreeVariables, ReparamSpec, constrain, unconstrain

GEO = TransducerGeometry.linear(4, 3e-4, element_width=2.7e-4)
SPEC = ReparamSpec.for_geometry(GEO)


def free(**kw):
    base = dict(amplitudes=np.zeros(2), positions=np.zeros((2, 2)), gamma=np.zeros(4))
    base.update(kw)
    return FreeVariables(**base)


def test_constrain_examples():
    f, p = constrain(free(), SPEC)
    assert np.all(f.amplitudes == 1.0)
    assert np.all(p.element_gain == 0.75)
    assert p.speed_of_sound == 1500.0
    _, hi = constrain(free(c=40.0), SPEC)
    assert hi.speed_of_sound == pytest.approx(1600.0, abs=1e-9)


def test_positions_in_current_wavelengths():
    xi = free(positions=np.array([[1.0, -2.0], [30.0, 40.0]]))
    f, p = constrain(xi, SPEC)
    lam = p.speed_of_sound / GEO.center_frequency
    np.testing.assert_allclose(f.positions, lam * xi.positions, rtol=1e-15)


def test_fixed_position_scale_when_no_frequency():
    spec = ReparamSpec(2.7e-4, 1e-3)
    f, _ = constrain(free(positions=np.ones((2, 2)), c=3.0), spec)
    assert np.all(f.positions == 1e-3)


def test_unconstrain_examples():
    field = ScattererField(np.zeros((2, 1)) + 5e-3, np.ones(1))
    params = ModelParams(1500.0, 0.5, 1.35e-4, np.full(4, 0.75), 0.0, 1.0, 1.0)
    xi = unconstrain(field, params, SPEC)
    assert xi.amplitudes[0] == 0.0
    assert xi.c == 0.0
    assert xi.elw == pytest.approx(0.0, abs=1e-15)
    assert np.all(np.abs(xi.gamma) < 1e-15)


def test_out_of_range_is_not_representable():
    field = ScattererField(np.zeros((2, 1)) + 5e-3, np.ones(1))
    with pytest.raises(ValidationError, match="not representable"):
        unconstrain(field, ModelParams(1600.0, 0.5, 1e-4, np.full(4, 0.8)), SPEC)
    with pytest.raises(ValidationError, match="not representable"):
        unconstrain(field, ModelParams(1500.0, 0.5, 1e-4, np.full(4, 0.5)), SPEC)
    with pytest.raises(ValidationError, match="not representable"):
        unconstrain(ScattererField(np.zeros((2, 1)) + 5e-3, np.zeros(1)),
                    ModelParams(1500.0, 0.5, 1e-4, np.full(4, 0.8)), SPEC)


@settings(max_examples=50)
@given(st.floats(1401, 1599), st.floats(0.01, 5), st.floats(1e-6, 2.69e-4), st.floats(-3.9e-7, 3.9e-7),
       st.lists(st.floats(0.51, 0.99), min_size=4, max_size=4), st.floats(0.05, 3), st.floats(1, 1e5),
       st.floats(1e-3, 10), st.floats(-5e-3, 5e-3), st.floats(1e-3, 3e-2))
def test_roundtrip_identity(c, mu, elw, t0, gamma, lpa, lpb, amp, x, z):
    field = ScattererField(np.array([[x], [z]]), np.array([amp]))
    params = ModelParams(c, mu, elw, np.array(gamma), t0, lpa, lpb)
    f2, p2 = constrain(unconstrain(field, params, SPEC), SPEC)
    np.testing.assert_allclose(f2.positions, field.positions, rtol=1e-12, atol=1e-18)
    np.testing.assert_allclose(f2.amplitudes, field.amplitudes, rtol=1e-12)
    for name in ("speed_of_sound", "attenuation_coeff", "element_width", "initial_time_offset",
                 "lowpass_intercept", "lowpass_slope"):
        assert getattr(p2, name) == pytest.approx(getattr(params, name), rel=1e-12, abs=1e-18)
    np.testing.assert_allclose(p2.element_gain, params.element_gain, rtol=1e-12)


@given(st.floats(-30, 30), st.floats(0.01, 5))
def test_transforms_strictly_increasing(x, dx):
    lo, hi = constrain(free(c=x, mu=x, elw=x, t0=x, lp_a=x, lp_b=x, gamma=np.full(4, x)), SPEC), \
        constrain(free(c=x + dx, mu=x + dx, elw=x + dx, t0=x + dx, lp_a=x + dx, lp_b=x + dx,
                       gamma=np.full(4, x + dx)), SPEC)
    a, b = lo[1], hi[1]
    for name in ("speed_of_sound", "attenuation_coeff", "element_width", "initial_time_offset",
                 "lowpass_intercept", "lowpass_slope"):
        assert getattr(b, name) >= getattr(a, name)
    assert b.attenuation_coeff > a.attenuation_coeff


@given(st.floats(-700, 700), st.floats(-50, 50), st.floats(-50, 50))
def test_constrained_values_always_valid(x, y, g):
    f, p = constrain(free(c=y, mu=x / 10, elw=y, t0=y, gamma=np.full(4, g), amplitudes=np.full(2, x)), SPEC)
    assert not p.problems(elw_nominal=GEO.element_width) or p.element_width == 0.0
    assert np.all(f.amplitudes >= 0)


def test_bad_bounds_rejected():
    with pytest.raises(ValidationError):
        ReparamSpec(2.7e-4, 1e-3, c_lo=1600, c_hi=1400)
