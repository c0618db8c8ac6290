import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("lab", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def sphere():
    from riccatilab.surface import thrice_punctured_sphere

    return thrice_punctured_sphere()


@pytest.fixture(scope="session")
def fuchsian_rep():
    from riccatilab.riccati import fuchsian

    return fuchsian()


@pytest.fixture(scope="session")
def family_rep():
    from riccatilab.riccati import parabolic_family

    return parabolic_family(2 + 0.4j)
