import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offgrid.beamform import EmptyImageError, PixelGrid, log_compress
from offgrid.core import RFDataCube, ValidationError
from offgrid.forward import ForwardModel
from offgrid.metrics import annulus_mask, das_magnitude, disk_mask, gcnr, gcnr_values, residual_image, rf_mse


def test_gcnr_identical_samples_is_zero():
    a = np.random.default_rng(0).normal(size=5000)
    assert gcnr_values(a, a.copy()) == 0.0


def test_gcnr_disjoint_supports_is_one():
    rng = np.random.default_rng(1)
    assert gcnr_values(rng.uniform(0, 1, 3000), rng.uniform(2, 3, 2000)) == 1.0


def test_gcnr_half_overlap_uniform():
    rng = np.random.default_rng(2)
    g = gcnr_values(rng.uniform(0, 1, 1_000_000), rng.uniform(0.5, 1.5, 1_000_000))
    assert abs(g - 0.5) < 0.02


def test_gcnr_loop_oracle():
    rng = np.random.default_rng(3)
    a, b = rng.normal(0, 1, 400), rng.normal(1, 1, 300)
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    edges = np.linspace(lo, hi, 17)
    pa = np.zeros(16)
    pb = np.zeros(16)
    for v, p, n in ((a, pa, a.size), (b, pb, b.size)):
        for s in v:
            k = min(int(np.searchsorted(edges, s, side="right")) - 1, 15)
            p[k] += 1.0 / n
    assert gcnr_values(a, b, bins=16) == pytest.approx(1 - np.minimum(pa, pb).sum(), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_gcnr_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(0, 1, 200), rng.normal(rng.uniform(-2, 2), 1, 150)
    g = gcnr_values(a, b)
    assert 0.0 <= g <= 1.0
    assert g == gcnr_values(b, a)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_gcnr_nearly_invariant_to_affine_remap(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(0, 1, 500), rng.normal(1, 1, 500)
    bins = 64
    g = gcnr_values(a, b, bins)
    assert abs(gcnr_values(3 * a - 7, 3 * b - 7, bins) - g) <= 2 / bins


def test_gcnr_masks():
    img = np.arange(36.0).reshape(6, 6)
    top = np.zeros((6, 6), bool)
    top[:2] = True
    bottom = np.zeros((6, 6), bool)
    bottom[4:] = True
    assert gcnr(img, top, bottom) == 1.0
    with pytest.raises(ValidationError, match="overlap"):
        gcnr(img, top, top)
    with pytest.raises(ValidationError, match="non-empty"):
        gcnr(img, top, np.zeros((6, 6), bool))
    with pytest.raises(ValidationError, match="shape"):
        gcnr(img, top[:5], bottom[:5])
    with pytest.raises(ValidationError):
        gcnr_values([], [1.0])


def test_region_masks():
    grid = PixelGrid(11, 11, (-5.0, -5.0), (1.0, 1.0))
    d = disk_mask(grid, 0.0, 0.0, 2.0)
    assert d.sum() == 13  # lattice points with x^2 + z^2 <= 4
    ring = annulus_mask(grid, 0.0, 0.0, 2.0, 3.0)
    assert not np.any(ring & d)
    assert (ring | d).sum() == disk_mask(grid, 0.0, 0.0, 3.0).sum()


def test_rf_mse_examples_and_loop_oracle():
    assert rf_mse(np.zeros((1, 4, 2)), np.ones((1, 4, 2))) == 1.0
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(2, 7, 3)), rng.normal(size=(2, 7, 3))
    acc = 0.0
    for v, w in zip(a.ravel(), b.ravel()):
        acc += (v - w) ** 2
    assert rf_mse(RFDataCube(a), b) == pytest.approx(acc / a.size, rel=1e-12)
    with pytest.raises(ValidationError, match="shape"):
        rf_mse(a, b[:, :6])


@pytest.fixture
def observed(geometry, scheme, params, field):
    return ForwardModel(geometry, scheme).predict_cube(field, params)


def test_residual_of_exact_fit_is_empty(geometry, scheme, observed):
    grid = PixelGrid.from_extent((-2e-3, 2e-3, 5e-3, 10e-3), 1e-4, 1e-4)
    with pytest.raises(EmptyImageError):
        residual_image(observed, observed, geometry, scheme, 1540.0, grid)


def test_residual_with_zero_prediction_is_das_image(geometry, scheme, observed):
    grid = PixelGrid.from_extent((-2e-3, 2e-3, 5e-3, 10e-3), 1e-4, 1e-4)
    zero = np.zeros_like(observed)
    res = residual_image(observed, zero, geometry, scheme, 1540.0, grid)
    das = log_compress(das_magnitude(observed, geometry, scheme, 1540.0, grid), 60.0)
    np.testing.assert_allclose(res, das, atol=1e-9)
    ref = residual_image(observed, zero, geometry, scheme, 1540.0, grid, reference=observed)
    np.testing.assert_allclose(ref, das, atol=1e-9)


def test_residual_scales_with_reference(geometry, scheme, observed):
    grid = PixelGrid.from_extent((-2e-3, 2e-3, 5e-3, 10e-3), 1e-4, 1e-4)
    part = 0.1 * observed
    res = residual_image(observed, observed - part, geometry, scheme, 1540.0, grid, reference=observed)
    assert res.max() == pytest.approx(-20.0, abs=1e-6)
