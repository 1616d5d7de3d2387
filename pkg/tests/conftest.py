import numpy as np
import pytest

from lscheme_homog import experiments as ex
from lscheme_homog.mesh import PerforationSpec, generate_cell, generate_perforated


@pytest.fixture(scope="session")
def cell128():
    return generate_cell(128, 0.4)


@pytest.fixture(scope="session")
def setup():
    return ex.StudySetup()


@pytest.fixture(scope="session")
def tensor(setup):
    return setup.tensor()


@pytest.fixture(scope="session")
def perforated():
    cache = {}

    def get(eps, n_per_cell=16):
        key = (eps, n_per_cell)
        if key not in cache:
            cache[key] = generate_perforated(n_per_cell, PerforationSpec(eps, 0.4))
        return cache[key]

    return get


def porosity(r):
    return 1.0 - np.pi * r * r
