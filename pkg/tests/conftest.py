import pytest

from thermograph import modelfile
from thermograph.shorthand import cyclic_contact, parse_word

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "notes": []})
    failed = rep.failed or (rep.when == "call" and hasattr(rep, "wasxfail"))
    if rep.skipped and hasattr(rep, "wasxfail"):
        failed = True
    if failed:
        entry["ok"] = False
        reason = getattr(rep, "wasxfail", "") or item.name
        if reason not in entry["notes"]:
            entry["notes"].append(reason)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        line = f"criterion {n:2d} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if not e["ok"]:
            line += "  [" + "; ".join(e["notes"]) + "]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cyc():
    return cyclic_contact()


@pytest.fixture(scope="session")
def word(cyc):
    return lambda text: parse_word(text, cyc)


@pytest.fixture(scope="session")
def triangles_small():
    m = modelfile.load("triangles-small.model")
    m.ruleset()
    return m


@pytest.fixture(scope="session")
def ring():
    """The ring model with its refined rule set compiled once per session."""
    m = modelfile.load("ring.model")
    m.ruleset()
    return m
