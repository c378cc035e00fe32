import re

_OUTCOMES: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)_", report.nodeid)
    if m and report.when == "call" or (m and report.failed):
        _OUTCOMES[int(m.group(1))] = report.outcome


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    numbers = sorted(set(VERDICTS) | set(_OUTCOMES))
    if not numbers:
        return
    terminalreporter.section("acceptance criteria")
    for n in numbers:
        line = VERDICTS.get(n)
        if line is None or (_OUTCOMES.get(n) == "failed" and ": PASS" in line):
            line = f"criterion {n}: FAIL  (assertion failed before the summary was recorded; see traceback)"
        terminalreporter.write_line(line)
