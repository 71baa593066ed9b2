import numpy as np
import pytest

import splitdecomp as sd


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def heat32():
    return sd.heat_1d(32)


@pytest.fixture(scope="session")
def families32():
    return sd.standard_families(32)
