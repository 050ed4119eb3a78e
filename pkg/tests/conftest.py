import numpy as np
import pytest

from kinetic_homog.acceptance import GENERIC_PSI_STAR, GENERIC_SIGMA, standard_kernel
from kinetic_homog.grids import CellGrid, build_velocity_grid
from kinetic_homog.kernel import build_kernel


@pytest.fixture(scope="session")
def vgrid():
    return build_velocity_grid(count=8)


@pytest.fixture(scope="session")
def small_kernel(vgrid):
    """Generic heterogeneous kernel on a 16-point cell (oracle-sized)."""
    return build_kernel(GENERIC_SIGMA, GENERIC_PSI_STAR, vgrid, CellGrid(16))


@pytest.fixture(scope="session")
def generic_kernel():
    return standard_kernel("generic")


@pytest.fixture(scope="session")
def isotropic_kernel():
    return standard_kernel("isotropic")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
