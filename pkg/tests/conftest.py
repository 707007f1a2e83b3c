import sys

import numpy as np
import pytest

from risklab.evaluation import ExperimentConfig, simulate
from risklab.poolsim import BagConfig


@pytest.fixture(scope="session")
def small_trial():
    """A 400-user desk simulation shared by tests that only need realistic bags."""
    return simulate(ExperimentConfig(bags=BagConfig(n_users=400)), 11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
