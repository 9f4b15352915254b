import numpy as np
import pytest

from cgvh.field import AmplitudeField


@pytest.fixture
def rng():
    return np.random.default_rng(20181007)


def random_field(rng, n, unit=False):
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    if unit:
        z /= np.linalg.norm(z)
    return AmplitudeField(z)
