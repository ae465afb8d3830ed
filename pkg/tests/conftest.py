"""Shared pytest plumbing: echo acceptance-criterion verdicts after the run.

test_acceptance accumulates one `[criterion N] PASS/FAIL: ...` line per
check; pytest captures stdout of passing tests, so the lines are replayed
in the terminal summary where they stay visible in plain `pytest -v` runs.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None) if mod else None
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
