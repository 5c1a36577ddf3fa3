import numpy as np
import pytest

from delaylearn.dde import TimeGrid
from delaylearn.loss import sample_dataset
from delaylearn.models import linear_model, logistic_model

# (model factory, true theta, true tau, x0) for the two benchmark problems
LOGISTIC = (logistic_model, np.array([1.0, 1.0]), 1.0, np.array([2.0]))
LINEAR = (linear_model, np.array([-2.0, -2.0]), 1.0, np.array([-1.0]))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def logistic_data():
    """Logistic benchmark data on T=10, dt=1e-3, sampled every 0.1."""
    grid = TimeGrid(10.0, 1e-3)
    make, theta, tau, x0 = LOGISTIC
    return make(), grid, sample_dataset(make(), theta, tau, x0, grid, 100)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
