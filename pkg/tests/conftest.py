import pytest

from dcitraffic.classes import AppClass
from dcitraffic.dci import Trace
from dcitraffic.synth import PRESETS, generate_session

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def empty_trace():
    return Trace([])


@pytest.fixture(scope="session")
def small_sessions():
    """Ten 60 s sessions per app, noise as in the presets."""
    return [generate_session(PRESETS[app], 60, seed=100 * int(app) + i)
            for app in AppClass for i in range(10)]
