"""Per-criterion PASS/FAIL summary for tests marked ``@pytest.mark.criterion(n, title)``."""
import pytest

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            entry = _results.setdefault(m.args[0], {"title": m.args[1], "outcomes": []})
            entry["tests"] = entry.get("tests", 0) + 1


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _results[m.args[0]]["outcomes"].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        entry = _results[n]
        outs = entry["outcomes"]
        if len(outs) < entry["tests"]:
            status = "FAIL" if outs and not all(outs) else "NOT RUN"
        else:
            status = "PASS" if all(outs) else "FAIL"
        terminalreporter.write_line(f"{status} criterion {n:2d}: {entry['title']}")
