import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "istab", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("istab")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
