import pytest

# lines appended by the acceptance module, echoed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    def report(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
