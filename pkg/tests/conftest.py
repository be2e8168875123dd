import pytest

_verdicts = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion; returns ``passed`` for asserting."""

    def record(number, title, passed, detail=""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        _verdicts.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
