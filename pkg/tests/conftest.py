import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in rep.user_properties if k == "detail")
    failed = rep.failed or (rep.when == "call" and rep.outcome != "passed")
    if rep.when == "call" or failed:
        prev = _ACCEPTANCE.get(number)
        status = "FAIL" if failed or (prev and prev[0] == "FAIL") else "PASS"
        details = [d for d in (prev[2] if prev else "", detail) if d]
        _ACCEPTANCE[number] = (status, title, "; ".join(details))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[number]
        line = f"{status} criterion {number:>2}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
