import numpy as np
import pytest

from tests.helpers import make_window


@pytest.fixture
def window():
    return make_window()


@pytest.fixture
def small_window():
    # 4 normal bins, 2 abnormal bins
    return make_window(4, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
