import pytest

_VERDICTS: dict = {}


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; the line is printed in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        _VERDICTS[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}" + (
            f"  [{detail}]" if detail else ""
        )
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[n])
