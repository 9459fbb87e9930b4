import numpy as np
import pytest

from ensemble_rkhs import IndexSet, TimeGrid
from ensemble_rkhs.presets import polynomial_system

ROT = [[0.0, -1.0], [1.0, 0.0]]
ZERO = [[0.0, 0.0], [0.0, 0.0]]

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def oscillator():
    """Harmonic-oscillator ensemble on [-1, 1] with both inputs, X0 = (1, 0)."""
    return polynomial_system(IndexSet(-1.0, 1.0), [ZERO, ROT], [np.eye(2)], None, [1.0, 0.0])


@pytest.fixture
def grid():
    return TimeGrid(1.0, 0.02)
