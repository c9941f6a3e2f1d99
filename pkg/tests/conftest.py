import numpy as np
import pytest

from depthfuse.ndcore import precision

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


@pytest.fixture
def record_criterion():
    """Record an acceptance verdict before asserting it, so the summary shows every line."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
        previous = _CRITERIA.get(number)
        if previous is not None:
            passed = passed and previous[1]
            detail = f"{previous[2]}; {detail}" if previous[2] else detail
        _CRITERIA[number] = (name, passed, detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        name, passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}")
