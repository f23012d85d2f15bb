import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: dict[int, str] = {}
ACCEPTANCE_NOTES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    """Record one acceptance line per criterion; printed in the terminal summary."""

    def _report(criterion: int, passed: bool, detail: str):
        line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[criterion] = line
        print(line)
        return passed

    def _note(text: str):
        ACCEPTANCE_NOTES.append(f"  note: {text}")
        print(text)

    _report.note = _note
    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
    for note in ACCEPTANCE_NOTES:
        terminalreporter.write_line(note)
