import numpy as np
import pytest

from depthlift import camera as cg
from depthlift import skeleton as sk


@pytest.fixture(scope="session")
def model():
    return sk.default_skeleton()


@pytest.fixture(scope="session")
def cams():
    return cg.synth_cameras(4, seed=0)


@pytest.fixture(scope="session")
def world(model):
    """Seven subjects, 8 frames per action, single camera id."""
    return sk.synth_generate(model, 7, 8, seed=3)


@pytest.fixture(scope="session")
def multi(world, cams):
    return sk.expand_cameras(world, sorted(cams))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
