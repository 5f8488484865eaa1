"""Shared test configuration.

Pins the kernel backend to the numpy reference implementation so results
are reproducible regardless of the environment, and adds a terminal
summary section with one PASS/FAIL line per acceptance criterion
(tests named ``test_criterion_<n>``).
"""

import os
import re

os.environ.setdefault("TRIPATH_KERNELS", "numpy")

_CRITERION = re.compile(r"test_criterion_(\d+)")
_ORDER = {"PASS": 0, "SKIP": 1, "FAIL": 2}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    status = {}
    labelled = (("passed", "PASS"), ("skipped", "SKIP"),
                ("failed", "FAIL"), ("error", "FAIL"))
    for key, label in labelled:
        for report in terminalreporter.stats.get(key, ()):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match is None:
                continue
            n = int(match.group(1))
            if n not in status or _ORDER[label] > _ORDER[status[n]]:
                status[n] = label
    if not status:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(status):
        terminalreporter.write_line(f"criterion {n}: {status[n]}")
