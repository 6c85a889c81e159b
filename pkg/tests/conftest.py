import numpy as np
import pytest

from fracbp.model import EnsembleSpec, sample_instance
from fracbp.oracle import brute_force
from fracbp.trw import edge_uniform_rho


@pytest.fixture(scope="session")
def grid3():
    """Seeded attractive 3x3 grid with positive fields."""
    return sample_instance(EnsembleSpec("grid", 3, "attractive", "uniform-pos", seed=1))


@pytest.fixture(scope="session")
def grid3_rho(grid3):
    return edge_uniform_rho(grid3.graph)


@pytest.fixture(scope="session")
def grid3_exact(grid3):
    return brute_force(grid3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
