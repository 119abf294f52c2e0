import pytest

from promptlab.catalog import load_catalog


@pytest.fixture(scope="session")
def catalog():
    return load_catalog()


@pytest.fixture(scope="session")
def product_ids(catalog):
    return tuple(e.product_id for e in catalog)



_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    status = _CRITERIA.get(number, (text, "FAIL"))[1]
    if rep.when == "call":
        status = "PASS" if rep.passed else "FAIL"
    elif rep.skipped:
        status = "SKIP"
    elif rep.failed:
        status = "FAIL"
    _CRITERIA[number] = (text, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, (text, status) in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {text}")
