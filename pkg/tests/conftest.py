import numpy as np
import pytest

from config import SystemConfig


@pytest.fixture
def rng():
    yield np.random.default_rng(20240601)


@pytest.fixture
def default_cfg():
    yield SystemConfig()
