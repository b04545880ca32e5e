import pytest

from kinsir.core import MomentState, Params


@pytest.fixture
def table1():
    return Params(alpha=1 / 50, beta=1 / 20, gamma=1 / 14, theta=2, sigma_s=1 / 100, sigma_i=1 / 100)


@pytest.fixture
def table1_init():
    return MomentState(4.0, 1.0, 0.5, 1 / 120, 1 / 120, 1 / 120)


@pytest.fixture
def no_reinfection():
    return Params(alpha=0, beta=1 / 20, gamma=1 / 14, theta=2, sigma_s=1 / 100, sigma_i=1 / 100)
