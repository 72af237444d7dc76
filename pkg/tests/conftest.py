from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def read_fixture(name: str) -> str:
    return (FIXTURES / name).read_text()


@pytest.fixture(name="read_fixture")
def read_fixture_fixture():
    return read_fixture


ACCEPTANCE_LINES: list = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion (printed in the summary)."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
