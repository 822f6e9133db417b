"""Shared test plumbing.

The acceptance tests append one human-readable verdict line per criterion;
the terminal-summary hook reprints them after the run so the verdicts are
visible even though pytest captures stdout.
"""


def pytest_configure(config):
    config._criterion_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
