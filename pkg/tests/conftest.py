"""Shared pytest hooks: the acceptance suite's per-criterion verdicts are
repeated at the end of the run so they are visible without ``-s``."""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
