import numpy as np
import pytest
from hypothesis import settings

from currl.tasks import Scenario, default_scenario_spec

settings.register_profile("default", deadline=None, derandomize=True)
settings.load_profile("default")


@pytest.fixture
def ss_spec():
    return default_scenario_spec(Scenario.SIMPLE_SPREAD)


@pytest.fixture
def pb_spec():
    return default_scenario_spec(Scenario.PUSH_BALL)


@pytest.fixture
def hs_spec():
    return default_scenario_spec(Scenario.HARD_SPREAD)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
