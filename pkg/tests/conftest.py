import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    prev = _CRITERIA.get(n, (title, "PASS"))[1]
    failed = report.failed or (report.when == "call" and report.skipped)
    _CRITERIA[n] = (title, "FAIL" if failed or prev == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, verdict = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {title}")
