"""Prints the acceptance scorecard after a run that included it."""
import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if not results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(results):
        status, desc = results[num]
        terminalreporter.write_line(f"criterion {num}: {status} - {desc}")
