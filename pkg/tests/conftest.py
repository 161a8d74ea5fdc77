import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_line():
    """Print an acceptance line and keep it for the end-of-run summary."""

    def emit(line: str) -> None:
        print(line)
        ACCEPTANCE_LINES.append(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
