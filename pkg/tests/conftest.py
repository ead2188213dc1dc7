import sys


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines where capture cannot hide them."""
    lines = []
    for name, mod in sys.modules.items():
        if name.rpartition(".")[2] == "test_acceptance":
            lines = getattr(mod, "RESULTS", [])
            break
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
