import numpy as np
import pytest

from sbps.analysis import laplace_band
from sbps.targets import generate_logistic_data, laplace_reference

# one line per acceptance criterion, printed at the end of the session
CRITERIA: dict = {}


def record(number: int, name: str, passed: bool, detail: str):
    CRITERIA[number] = (name, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(CRITERIA):
        name, passed, detail = CRITERIA[number]
        tr.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({name}): {detail}")


@pytest.fixture(scope="session")
def logistic():
    """The d=20, N=1000 synthetic logistic regression posterior, with its MAP and Laplace band."""
    target = generate_logistic_data(20, 1000, np.random.default_rng(0))
    w_hat, H = laplace_reference(target)
    center, spread = laplace_band(target, w_hat)
    return target, w_hat, H, center, spread


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
