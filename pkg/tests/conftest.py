"""Prints one pass/fail line per acceptance criterion at the end of the run."""

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call" and outcome != "error":
                continue
            m = _CRITERION.search(rep.nodeid)
            if not m:
                continue
            detail = dict(rep.user_properties).get("measured", "")
            verdict = "PASS" if outcome == "passed" else "FAIL"
            lines.append((int(m.group(1)), f"criterion {int(m.group(1)):2d} {m.group(2).replace('_', ' ')}: {verdict}  {detail}".rstrip()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
