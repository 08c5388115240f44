import pytest

_VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, name, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else "")
        _VERDICTS.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
