import numpy as np
import pytest

from mkdvlab.spectral import SpectralField


@pytest.fixture
def rng():
    return np.random.default_rng(20240911)


def random_field(rng, N, scale=1.0):
    c = (rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1)) * scale
    return SpectralField(N, c)


@pytest.fixture
def make_field(rng):
    def _make(N, scale=1.0):
        return random_field(rng, N, scale)

    return _make
