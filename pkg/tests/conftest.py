import numpy as np
import pytest

from gridop.physics import default_operating_point


@pytest.fixture(scope="session")
def operating_point():
    """(x_star, calibrated generator params, grid params) shared by tests."""
    return default_operating_point()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
