import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo interop verdict lines after the capture-managed test output."""
    for name, mod in sys.modules.items():
        if name.endswith("test_interop"):
            verdicts = getattr(mod, "VERDICTS", [])
            if verdicts:
                terminalreporter.section("exporter interop")
                for line in verdicts:
                    terminalreporter.write_line(line)
