import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed together at the end of the session."""

    def record(number, passed, detail):
        status = "PASS" if bool(passed) else "FAIL"
        _LINES.append(f"criterion {number:>2}: {status}  {detail}")
        print(_LINES[-1])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
