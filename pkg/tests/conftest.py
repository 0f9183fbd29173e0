import numpy as np
import pytest

from tmm.discrepancy import OptimizerOptions
from tmm.forward import ForwardOptions, propagate
from tmm.sde import SabrModel


@pytest.fixture(scope="session")
def small_sabr_flow():
    """Small SABR flow: 40 particles, 4 steps to T = 1."""
    model = SabrModel()
    opts = ForwardOptions(aux_factor=10, seed=3, optimizer=OptimizerOptions(restarts=1, max_iters=60))
    return propagate(model, None, model.x0, np.linspace(0, 1, 5), 40, opts)


#: Lines ``[PASS|FAIL] criterion n: ...`` collected by the acceptance suite.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
