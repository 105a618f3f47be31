import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402


@pytest.fixture(scope="session")
def smooth_512():
    """Band-limited 512x256 RGB panorama shared across tests."""
    return oracles.smooth_pano(512)


@pytest.fixture(scope="session")
def smooth_256():
    return oracles.smooth_pano(256)


@pytest.fixture(scope="session")
def seed_nfov(smooth_512):
    """A 128x128 crop used as the run seed image."""
    return np.ascontiguousarray(smooth_512[60:188, 100:228])


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
