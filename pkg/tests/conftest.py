import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report_line():
    """Record one PASS/FAIL line for the terminal summary."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
