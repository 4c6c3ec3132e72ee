import pytest

_REPORT = []


@pytest.fixture(scope="session")
def report():
    """Record one acceptance line: report(label, ok, detail)."""

    def add(label, ok, detail=""):
        _REPORT.append((label, bool(ok), detail))
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _REPORT:
        terminalreporter.write_line(f"{label}: {'PASS' if ok else 'FAIL'}  {detail}")
