import pytest

# (number, title, passed, detail) appended by the acceptance suite
ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record a named acceptance criterion; the outcome is printed in the summary."""

    def record(number: int, title: str):
        entry = {"number": number, "title": title, "detail": ""}
        request.node._acceptance = entry
        ACCEPTANCE.append(entry)
        return entry

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = getattr(item, "_acceptance", None)
    if entry is not None and rep.when == "call":
        entry["passed"] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for e in sorted(ACCEPTANCE, key=lambda e: e["number"]):
        status = "PASS" if e.get("passed") else "FAIL"
        terminalreporter.write_line(f"criterion {e['number']:2d} {status}  {e['title']}  {e['detail']}")
