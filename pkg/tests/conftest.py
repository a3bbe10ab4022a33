import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hydrodg import build_structured_mesh

settings.register_profile("hydrodg", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hydrodg")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def mesh4():
    return build_structured_mesh(4, 4)


@pytest.fixture(scope="session")
def mesh8():
    return build_structured_mesh(8, 8)
