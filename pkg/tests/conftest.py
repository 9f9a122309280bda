import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one pass/fail line per acceptance criterion, printed after the run
_CRITERIA = {}


@pytest.fixture
def detail(request):
    """Dict a criterion test fills with the measured numbers it checked."""
    info = {}
    request.node.criterion_detail = info
    return info


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    num, title = marker.args
    info = getattr(item, "criterion_detail", {})
    text = ", ".join(f"{k}={v}" for k, v in info.items())
    _CRITERIA[num] = (report.passed, title, text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        ok, title, text = _CRITERIA[num]
        line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{text}]" if text else ""))
