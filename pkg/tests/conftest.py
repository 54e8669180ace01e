import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "bocl", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("bocl")


@pytest.fixture(scope="session")
def pools():
    from bocl import data

    return data.load_pools()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

