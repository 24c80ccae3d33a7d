import numpy as np
import pytest

from cooplbm.core import Clustering

ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    """Record a one-line verdict for the acceptance summary."""

    def record(number, passed, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def block_diagonal(n1=6, n2=6):
    """Two disconnected complete blocks with their planted labels."""
    v = np.zeros((n1, n2), dtype=np.int8)
    v[: n1 // 2, : n2 // 2] = 1
    v[n1 // 2 :, n2 // 2 :] = 1
    z1 = Clustering(np.repeat([0, 1], [n1 // 2, n1 - n1 // 2]), 2)
    z2 = Clustering(np.repeat([0, 1], [n2 // 2, n2 - n2 // 2]), 2)
    return v, z1, z2
