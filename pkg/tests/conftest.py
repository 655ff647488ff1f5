import numpy as np
import pytest

from fracalign.constellation import enumerate_vectors, qpsk
from fracalign.scenario import Scenario, draw_channels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mimo4():
    """3 users, 4 antennas, 2 streams each."""
    return draw_channels(Scenario(3, 4, (2, 2, 2)), seed=7)


@pytest.fixture
def mimo3():
    return draw_channels(Scenario(3, 3, (2, 2, 2)), seed=11)


@pytest.fixture
def qpsk2_spaces():
    return [enumerate_vectors(qpsk(), 2, i) for i in range(3)]


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        request.config.acceptance_lines[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
