import pytest

_ACCEPTANCE_LINES = []


def record_criterion(line: str):
    _ACCEPTANCE_LINES.append(line)


@pytest.fixture(scope="session")
def criterion_log():
    """Collector for one pass/fail line per acceptance criterion; the lines
    are echoed in the terminal summary so they survive output capture."""
    return record_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
