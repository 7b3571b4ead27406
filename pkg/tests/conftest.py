import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then return the outcome."""

    def record(label: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        print(_ACCEPTANCE_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        # labels start with a zero-padded criterion number
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: s.split("  ", 1)[1]):
            terminalreporter.write_line(line)
