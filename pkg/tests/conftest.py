"""Collects acceptance-criterion outcomes and prints one PASS/FAIL line each."""

import pytest

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "notes": []})
    if rep.failed:
        entry["passed"] = False
        entry["notes"].append(f"{item.name} failed")
    for key, value in item.user_properties:
        if key == "detail":
            entry["notes"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["passed"] else "FAIL"
        line = f"criterion {number} [{status}] {entry['title']}"
        if entry["notes"]:
            line += " | " + "; ".join(dict.fromkeys(entry["notes"]))
        terminalreporter.write_line(line)
