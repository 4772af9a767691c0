import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240802)


def random_spd(rng, p, scale=1.0):
    b = rng.standard_normal((p, p))
    return scale * (b @ b.T + p * np.eye(p))


@pytest.fixture
def make_spd():
    return random_spd
