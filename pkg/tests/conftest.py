import numpy as np
import pytest

from dectomo.decomposition import PolynomialDecomposer, make_calibration_set
from dectomo.phantoms import Ellipse, make_phantom
from dectomo.projector import Geometry
from dectomo.spectral import EnergyGrid, make_builtin_basis, make_synthetic_spectrum


@pytest.fixture(scope="session")
def grid():
    return EnergyGrid(20.0, 120.0, 1.0)


@pytest.fixture(scope="session")
def basis(grid):
    return make_builtin_basis(grid)


@pytest.fixture(scope="session")
def delta_spectrum(grid):
    return make_synthetic_spectrum("delta-pair", grid, 1e5)


@pytest.fixture(scope="session")
def triangular_spectrum(grid):
    return make_synthetic_spectrum("triangular-pair", grid, 1e5)


@pytest.fixture(scope="session")
def poly_decomposer(triangular_spectrum, basis):
    """Degree-(3,3) decomposer fitted on a noiseless calibration grid."""
    y, p, w = make_calibration_set(triangular_spectrum, basis, 10000.0, 7000.0, 24)
    return PolynomialDecomposer(3, 3).fit(y, p, sample_weight=w)


def linear_decomposer(matrix, bias=None):
    """Decomposer computing p = matrix @ y (+ bias), for oracle tests."""
    dec = PolynomialDecomposer(1, 1)
    dec.scale_offset_ = np.zeros(2)
    dec.scale_slope_ = np.ones(2)
    theta = np.zeros((4, 2))
    if bias is not None:
        theta[0] = bias
    # monomial order: [1, y2, y1, y1*y2]
    theta[2] = matrix[:, 0]
    theta[1] = matrix[:, 1]
    dec.theta_ = theta
    return dec


@pytest.fixture
def small_phantom():
    """16x16 two-material phantom used by small reconstruction tests."""
    ellipses = [
        Ellipse(0.0, 0.0, 0.55, 0.45, 0.4, 900.0, 0.0),
        Ellipse(0.12, -0.08, 0.2, 0.16, 0.0, 0.0, 1000.0),
    ]
    return make_phantom(ellipses, 16, 16, 0.1)


@pytest.fixture
def small_geometry():
    return Geometry.for_image(16, 16, 0.1, 24)
