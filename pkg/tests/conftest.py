import numpy as np
import pytest

from drivefuel.idm_sim import DriverPreferences, IdmConstants
from drivefuel.trace_io import SpeedTrace, gen_highway, gen_local

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def prefs():
    return DriverPreferences(a_max=1.0, b_des=1.5, headway=1.5, jam=2.0)


@pytest.fixture
def consts():
    return IdmConstants(v0=33.33)


@pytest.fixture(scope="session")
def short_highway():
    return gen_highway(120.0, 0.1, cruise=25.0, seed=3)


@pytest.fixture(scope="session")
def short_local():
    return gen_local(240.0, 0.1, top_speed=15.0, stops=5, seed=3)


@pytest.fixture
def ramp_trace():
    return SpeedTrace(1.0, np.arange(11) * 2.0)
