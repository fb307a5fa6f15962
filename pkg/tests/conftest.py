import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; printed again in the terminal summary."""

    def record(criterion, passed, detail):
        line = f"criterion {criterion:<10} {'PASS' if passed else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _LINES:
        terminalreporter.write_line(line)
