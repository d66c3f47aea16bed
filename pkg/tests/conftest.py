import numpy as np
import pytest

from superatom.params import REFERENCE_SETS

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def row1():
    return REFERENCE_SETS["d100_r15"].effective()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
