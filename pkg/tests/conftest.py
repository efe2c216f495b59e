import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        details = [v for k, v in report.user_properties if k == "detail"]
        _acceptance[name] = (report.outcome == "passed", details)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, (ok, details) in _acceptance.items():
        m = re.match(r"test_criterion_(\w+?)_(.*)", name)
        label = f"criterion {m.group(1)}: {m.group(2).replace('_', ' ')}" if m else name
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {label}")
        for d in details:
            for line in str(d).splitlines():
                tr.write_line(f"        {line}")
