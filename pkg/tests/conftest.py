import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line: report(criterion, passed, detail)."""
    def add(criterion, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {criterion}: {status}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
