import numpy as np
import pytest

from wienerlab.grid import make_grid


@pytest.fixture
def geo12():
    return make_grid(12, "geometric", ratio=0.5, k_max=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
