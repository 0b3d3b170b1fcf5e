import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line; printed in the terminal summary."""

    def record(criterion, ok, detail=""):
        _VERDICTS.append((criterion, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
