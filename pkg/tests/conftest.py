"""Collects one pass/fail line per acceptance criterion and prints them at the end."""

import pytest

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "passed": True, "skipped": False,
                                          "failures": []})
    if report.skipped:
        entry["skipped"] = True
    elif report.failed:
        entry["passed"] = False
        message = str(call.excinfo.value).strip().splitlines() if call.excinfo else []
        entry["failures"].append(f"{item.name}: {message[0] if message else report.outcome}")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "FAIL" if not entry["passed"] else "SKIP" if entry["skipped"] else "PASS"
        terminalreporter.write_line(f"[{status}] criterion {number}: {entry['title']}")
        for failure in entry["failures"]:
            terminalreporter.write_line(f"         {failure}")
