import numpy as np
import pytest

from ccpmo.problem import builtin
from ccpmo.smoothing import SampleSet

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def ex1():
    return builtin("example1")


@pytest.fixture(scope="session")
def lin():
    return builtin("linear1d")


@pytest.fixture(scope="session")
def quad():
    return builtin("quadrotor")


@pytest.fixture(scope="session")
def D_ex1(ex1):
    return SampleSet.draw(ex1, 10_000, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
