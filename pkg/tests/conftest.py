import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

CRITERIA_LINES = {}


@pytest.fixture
def criterion_log(capsys):
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def log(number, passed, detail):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        CRITERIA_LINES[number] = line
        with capsys.disabled():
            print("\n" + line)
        return passed

    return log


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA_LINES):
            terminalreporter.write_line(CRITERIA_LINES[n])
