import numpy as np
import pytest

from epsmooth import SystemModel, WeightSpec, section4_model, section4_weights

_ACCEPTANCE = []


@pytest.fixture
def scalar_model():
    return SystemModel([[1.0]], [[1.0]], [[1.0]], [0.0])


@pytest.fixture
def scalar_weights():
    def make(eps=0.5):
        return WeightSpec([[1.0]], [[1.0]], [[1.0]], [eps])
    return make


@pytest.fixture
def scalar_y():
    return np.array([[1.0], [1.0]])


@pytest.fixture
def bench():
    return section4_model(), section4_weights()


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the summary."""
    def record(number, title, passed, detail):
        _ACCEPTANCE.append((number, title, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
