"""Shared pytest configuration.

After the normal summary, print one PASS/FAIL line per acceptance criterion
so the acceptance run reads as a checklist. test_acceptance records each
criterion outcome in its module-level RESULTS list as it executes.
"""

from __future__ import annotations

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = sys.modules.get("test_acceptance") or sys.modules.get(
        "tests.test_acceptance"
    )
    if module is None:
        return
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for line in results:
        tr.write_line(line)
