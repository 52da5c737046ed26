import sys

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


@pytest.fixture
def two_sample():
    # z=(1,2), delta=(1,0), x=(1,0)
    return np.array([[1.0], [0.0]]), np.array([1.0, 2.0]), np.array([1, 0])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
