import pytest

# One "criterion N: PASS/FAIL ..." line per acceptance check, shown at the end.
ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    def add(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
