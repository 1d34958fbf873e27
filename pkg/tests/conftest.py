import pytest

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def verdict(request):
    """verdict(ok, detail) records a pass/fail line for the test's criterion."""
    marker = request.node.get_closest_marker("criterion")
    store = request.config.stash[_VERDICTS]

    def record(ok, detail):
        n = marker.args[0] if marker else request.node.name
        store.setdefault(n, []).append((bool(ok), f"{request.node.name}: {detail}"))
        return ok

    return record


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker and call.when == "call" and call.excinfo is not None:
        store = item.config.stash[_VERDICTS]
        lines = store.setdefault(marker.args[0], [])
        if not any(item.name in text for _, text in lines):
            lines.append((False, f"{item.name}: raised {call.excinfo.typename}"))


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash[_VERDICTS]
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store, key=lambda k: (not isinstance(k, int), str(k).zfill(4))):
        for ok, text in store[n]:
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
