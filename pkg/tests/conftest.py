import sys
import warnings

import numpy as np
import pytest

from repairctl import SpatialGrid, SystemState, make_linear_target
from repairctl.errors import VanishingDataWarning


@pytest.fixture
def grid():
    return SpatialGrid.uniform(1.0, 128)


@pytest.fixture
def target():
    return make_linear_target(1.0, 1.0)


def point_mass(grid):
    return SystemState(1.0, np.zeros_like(grid.nodes))


def quiet(fn, *args, **kwargs):
    """Call a solver with the vanishing-data warning silenced."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", VanishingDataWarning)
        return fn(*args, **kwargs)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
