import numpy as np
import pytest

from cnslab.littlewood_paley import build_filter_bank
from cnslab.spectral import TorusGrid


@pytest.fixture(scope="session")
def grid32():
    return TorusGrid(2, 32)


@pytest.fixture(scope="session")
def grid64():
    return TorusGrid(2, 64)


@pytest.fixture(scope="session")
def bank32(grid32):
    return build_filter_bank(grid32)


@pytest.fixture(scope="session")
def bank64(grid64):
    return build_filter_bank(grid64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def band_limited(grid, rng, kmax=5):
    """Random real field with modes |k_i| <= kmax."""
    hat = np.zeros(grid.shape, dtype=complex)
    size = 2 * kmax + 1
    coeff = rng.standard_normal((size,) * grid.dim) + 1j * rng.standard_normal((size,) * grid.dim)
    ks = np.meshgrid(*([np.arange(-kmax, kmax + 1)] * grid.dim), indexing="ij")
    hat[tuple(np.mod(k, grid.N) for k in ks)] = coeff
    a = np.fft.ifftn(hat).real
    return a / np.max(np.abs(a))
