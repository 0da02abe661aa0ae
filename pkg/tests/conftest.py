import math

import numpy as np
import pytest

from dssns.dss_fields import StripGrid
from dssns.initial_data import ProfileSpec, make_axisym_noswirl, make_initial_data


@pytest.fixture(scope="session")
def tiny_grid():
    return StripGrid(2.0, 6, math.log(0.5), math.log(8.0), 2, 4, 2)


@pytest.fixture(scope="session")
def small_grid():
    return StripGrid(2.0, 8, math.log(0.5), math.log(16.0), 3, 6, 3)


@pytest.fixture(scope="session")
def axisym_data():
    return make_axisym_noswirl(ProfileSpec(seed=1, dss_amplitude=0.2), 2.0, 0.05)


@pytest.fixture(scope="session")
def generic_data():
    return make_initial_data(ProfileSpec(seed=3, dss_amplitude=0.2), 2.0, 0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


ACCEPTANCE = []


@pytest.fixture
def verdict(capsys):
    """record(criterion, ok, detail): prints one PASS/FAIL line and fails the test on FAIL."""
    def record(cid, ok, detail):
        line = f"ACCEPTANCE {cid}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
