import numpy as np
import pytest

from rmpc.dynamics import LinearSystem
from rmpc.objective import QuadraticUtility


@pytest.fixture
def scalar_lq():
    """x' = 0.9 x + 0.1 u with l = x^2 + u^2."""
    return LinearSystem([[0.9]], [[0.1]]), QuadraticUtility([[1.0]], [[1.0]], [[0.0]], [[1.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record(criterion, ok, detail):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
