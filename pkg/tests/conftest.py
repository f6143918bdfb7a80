import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line(capsys):
    """Print one PASS/FAIL line per acceptance criterion, uncaptured."""
    def emit(tag, passed, detail):
        # passed=None marks an informational line that gates nothing
        status = "INFO" if passed is None else ("PASS" if passed else "FAIL")
        line = f"[acceptance] {tag} {status} {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
