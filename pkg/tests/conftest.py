import numpy as np
import pytest

from dualchain.data import make_shapes, shape_prior
from dualchain.predictor import gmm_predictor
from dualchain.schedule import make_linear_schedule


@pytest.fixture(scope="session")
def schedule():
    return make_linear_schedule()


@pytest.fixture(scope="session")
def shapes():
    return make_shapes(20, 0)


@pytest.fixture
def gmm(schedule):
    return gmm_predictor(shape_prior(), schedule)


@pytest.fixture
def rng_np():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
