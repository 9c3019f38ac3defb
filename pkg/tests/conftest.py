import numpy as np
import pytest

from ramlab.linalg import SymmetricMatrix
from ramlab.presets import PresetCatalog
from ramlab.proposals import RngStream
from ramlab.targets import EllipticalStudentTarget, GaussianTarget

STUDENT2D_LOCATION = np.array([1.0, 2.0])
STUDENT2D_SHAPE = np.array([[0.2, 0.1], [0.1, 0.8]])


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return RngStream(2024, 0)


@pytest.fixture
def np_rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def catalog():
    return PresetCatalog()


@pytest.fixture
def student2d():
    return EllipticalStudentTarget(STUDENT2D_LOCATION, SymmetricMatrix(STUDENT2D_SHAPE), 1.0)


@pytest.fixture
def spherical_gaussian():
    def make(dim=2):
        return GaussianTarget(np.zeros(dim), SymmetricMatrix.identity(dim))
    return make


@pytest.fixture
def random_spd(np_rng):
    def make(dim, jitter=0.1):
        M = np_rng.standard_normal((dim, dim))
        return M @ M.T + jitter * np.eye(dim)
    return make
