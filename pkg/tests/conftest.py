import numpy as np
import pytest

from mwifv.mesh import build_structured_mesh

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def two_cells():
    """Unit-height row with cell widths 1 and 2 (interior face at x = 1)."""
    return build_structured_mesh(2, 1, domain=((0.0, 3.0), (0.0, 1.0)), x_nodes=[0.0, 1.0, 3.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)
