"""Collects the outcome of every test marked ``criterion`` and prints one
line per acceptance criterion at the end of the run."""
import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    passed = report.passed and not hasattr(report, "wasxfail")
    detail = dict(item.user_properties).get("detail", "")
    _RESULTS[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, passed, detail = _RESULTS[number]
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number} [{status}] {title}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))
