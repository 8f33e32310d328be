"""Shared pytest configuration.

Prints one PASS/FAIL line per acceptance criterion at the end of a run so
the acceptance gate is readable without scrolling through the full log.
"""

from __future__ import annotations

import re

_ACCEPTANCE_RESULTS: dict[str, str] = {}
_CRITERION_RE = re.compile(r"test_criterion_(\d+)", re.IGNORECASE)


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    m = _CRITERION_RE.search(report.nodeid)
    if not m:
        return
    key = report.nodeid.split("::")[-1]
    if report.when == "call":
        _ACCEPTANCE_RESULTS[key] = report.outcome.upper()
    elif report.when == "setup" and report.outcome != "passed":
        _ACCEPTANCE_RESULTS[key] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_ACCEPTANCE_RESULTS, key=_criterion_number):
        outcome = _ACCEPTANCE_RESULTS[key]
        line = f"{'PASS' if outcome == 'PASSED' else outcome}: {key}"
        terminalreporter.write_line(line)


def _criterion_number(key: str) -> int:
    m = _CRITERION_RE.search(key)
    return int(m.group(1)) if m else 0
