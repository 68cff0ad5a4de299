import _report


def pytest_terminal_summary(terminalreporter):
    if _report.LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_report.LINES):
            terminalreporter.write_line(line)
