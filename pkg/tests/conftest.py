"""Collects the acceptance criteria outcomes and prints one line for each."""

import pytest

_RESULTS: dict[int, tuple[str, bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    n, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.failed and call.excinfo is not None:
        lines = str(call.excinfo.value).splitlines() or [call.excinfo.typename]
        detail = f"{detail}; {lines[0]}" if detail else lines[0]
    _RESULTS[n] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, detail = _RESULTS[n]
        line = f"AC{n:<2} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
