"""Shared test plumbing: collect acceptance-criterion verdict lines and echo
them in the terminal summary, where they survive pytest's output capture."""

criterion_lines = []


def record_criterion(line: str) -> None:
    print(line)
    criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in criterion_lines:
            terminalreporter.write_line(line)
