import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for an acceptance criterion and return the flag."""
    def record(ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {request.node.name}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
