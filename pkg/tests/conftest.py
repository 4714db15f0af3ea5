from __future__ import annotations

import pytest

# criterion number -> short description; filled by the acceptance module's markers
_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, {"title": title, "failed": False, "ran": False, "details": []})
    if report.when == "call":
        entry["ran"] = True
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]
    if report.failed:
        entry["failed"] = True


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        status = "FAIL" if entry["failed"] or not entry["ran"] else "PASS"
        line = f"criterion {number:>2}: {status}  {entry['title']}"
        if entry["details"]:
            line += "  [" + "; ".join(entry["details"]) + "]"
        terminalreporter.write_line(line)
