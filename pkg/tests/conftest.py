import sys


def pytest_terminal_summary(terminalreporter):
    # echo the acceptance verdicts after the normal report
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
