"""Shared pytest config: acceptance summary lines.

Tests marked @pytest.mark.acceptance("<criterion>") get one PASS/FAIL line
each in the terminal summary, so a run's acceptance status is greppable.
"""

import pytest

_results: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(name): end-to-end acceptance criterion; one summary line per name")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "setup" and report.failed:
        _results[name] = "FAIL"
    elif report.when == "call":
        _results[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _results.items():
        terminalreporter.write_line(f"ACCEPTANCE {name}: {status}")
