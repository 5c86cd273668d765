import numpy as np
import pytest

from jcqudit.qsys import default_params


@pytest.fixture
def params():
    return default_params()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from tests.test_acceptance import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for k in sorted(REPORT):
            terminalreporter.write_line(REPORT[k])
