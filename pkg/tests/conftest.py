import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion number and summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    prev = _CRITERIA.get(n, (text, "PASS"))
    if rep.failed:
        _CRITERIA[n] = (text, "FAIL")
    elif rep.when == "call" and rep.skipped:
        _CRITERIA[n] = (text, "SKIP")
    elif rep.when == "call":
        _CRITERIA[n] = prev


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, status = _CRITERIA[n]
        terminalreporter.write_line(f"[{status}] criterion {n}: {text}")
