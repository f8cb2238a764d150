import pytest

_RESULTS = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def record(request):
    """Attach measured values to the current acceptance test for the summary line."""

    def _record(**values):
        request.node._acceptance_detail = ", ".join(f"{k}={_short(v)}" for k, v in values.items())

    return _record


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    detail = getattr(item, "_acceptance_detail", "")
    _RESULTS.append((number, title, "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(_RESULTS):
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} | {detail}")
