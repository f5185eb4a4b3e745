import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Repeat the acceptance verdict lines where they cannot be missed."""
    mod = sys.modules.get("tests.test_acceptance") or sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance gate")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
