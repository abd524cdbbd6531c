import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    detail = getattr(item, "criterion_detail", "")
    outcome = "PASS" if call.excinfo is None else "FAIL"
    _RESULTS[number] = (outcome, title, detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        outcome, title, detail = _RESULTS[number]
        line = f"criterion {number} {outcome}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))


@pytest.fixture
def report(request):
    """Attach a short measured summary to the criterion line."""
    def note(text):
        request.node.criterion_detail = text
        print(f"criterion detail: {text}")
    return note
