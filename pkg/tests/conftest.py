import numpy as np
import pytest

from gazeguard.synthcam import SessionConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cfg():
    return SessionConfig(seed=7)
