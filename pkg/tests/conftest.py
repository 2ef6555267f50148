import numpy as np
import pytest
from hypothesis import settings

from gauduchon.grid import TorusGrid

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid2():
    return TorusGrid(2, 16)


@pytest.fixture(scope="session")
def grid3():
    return TorusGrid(3, 8)
