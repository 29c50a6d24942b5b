from collections import defaultdict

import pytest

_outcomes = defaultdict(list)
_labels = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, label): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    number, label = m.args
    _labels[number] = label
    if rep.when == "call" or rep.failed:
        _outcomes[number].append((item.name, rep.passed and not rep.skipped, rep.skipped))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_outcomes):
        results = _outcomes[number]
        if all(skipped for _, _, skipped in results):
            status = "SKIP"
        else:
            status = "PASS" if all(ok or skipped for _, ok, skipped in results) else "FAIL"
        failed = [name for name, ok, skipped in results if not ok and not skipped]
        extra = f"  (failing: {', '.join(failed)})" if failed else ""
        tr.write_line(f"criterion {number:>2}: {status}  {_labels[number]}{extra}")
