from led_ti.acceptance import CRITERIA


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance lines at the end of the run, -s or not."""
    lines = []
    for rep in terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", []):
        if "test_acceptance.py" in rep.nodeid:
            for name, text in rep.sections:
                if "stdout" in name:
                    lines.extend(line for line in text.splitlines() if line.startswith("["))
    if lines:
        order = {c[0]: i for i, c in enumerate(CRITERIA)}
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: order.get(s.split()[1], 99)):
            terminalreporter.write_line(line)
