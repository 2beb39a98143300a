from pathlib import Path

import pytest

from mintime.cli import solve_scenario
from mintime.scenarios import load_scenario

REPO_SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
ACCEPTANCE_LINES = {}


def _solved(name, registry=None):
    sc = load_scenario(name, registry)
    return sc, solve_scenario(sc)


@pytest.fixture(scope="session")
def eikonal():
    return _solved("eikonal")


@pytest.fixture(scope="session")
def double_integrator():
    return _solved("double-integrator")


@pytest.fixture(scope="session")
def rotation():
    return _solved("linear-rotation")


@pytest.fixture(scope="session")
def square():
    return _solved("square")


@pytest.fixture(scope="session")
def two_ball_ridge():
    return _solved("two-ball-ridge", REPO_SCENARIOS)


@pytest.fixture
def criterion():
    """Record the outcome line of an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
