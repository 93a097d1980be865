import numpy as np
import pytest

from dbarlab.grids_norms import SpatialGrid, SpectralGrid, build_potential


@pytest.fixture(scope="session")
def grid64():
    return SpatialGrid(64)


@pytest.fixture(scope="session")
def grid32():
    return SpatialGrid(32)


@pytest.fixture(scope="session")
def bump64(grid64):
    return build_potential("bump", (1.0, 0.5), grid64)


@pytest.fixture(scope="session")
def bump32(grid32):
    return build_potential("bump", (1.0, 0.5), grid32)


@pytest.fixture(scope="session")
def small_sgrid():
    return SpectralGrid(8.0, 16, 16, 64)


def slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@pytest.fixture(scope="session")
def small_scat(bump32):
    """Scattering data of the bump at E = 25 on a coarse spectral grid."""
    from dbarlab.scattering_transform import compute_scattering
    return compute_scattering(bump32, 25.0, SpectralGrid(8.0, 16, 16, 32), N_T=32)
