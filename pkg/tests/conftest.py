"""Suite-wide pytest hooks.

The acceptance tests register one line per numbered criterion here; the
terminal summary re-emits them so the pass/fail report is visible even under
output capture.
"""

CRITERION_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERION_RESULTS:
        terminalreporter.write_line(line)
