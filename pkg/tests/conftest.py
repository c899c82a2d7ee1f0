"""Shared small acquisitions for the unit tests."""

import numpy as np
import pytest

from offgrid.core import ModelParams, ScattererField, TransducerGeometry
from offgrid.phantom import make_scheme


@pytest.fixture
def geometry():
    return TransducerGeometry.linear(16, 0.3e-3, element_width=0.27e-3)


@pytest.fixture
def scheme(geometry):
    return make_scheme(geometry, "sa", n_tx=2, n_ft=384)


@pytest.fixture
def params(geometry):
    rng = np.random.default_rng(11)
    return ModelParams(1540.0, 0.5, 0.9 * geometry.element_width, rng.uniform(0.75, 1.0, geometry.n_ch),
                       1e-8, 0.85, 3e3)


@pytest.fixture
def field():
    return ScattererField(np.array([[-1e-3, 0.5e-3, 1.2e-3], [6e-3, 7.5e-3, 9e-3]]),
                          np.array([1.0, 0.6, 0.8]))
