"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""
import pytest

_OUTCOMES = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = marker.args[:2]
        detail = dict(item.user_properties).get("detail", "")
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _OUTCOMES[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_OUTCOMES):
        title, status, detail = _OUTCOMES[number]
        line = f"criterion {number}: {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
