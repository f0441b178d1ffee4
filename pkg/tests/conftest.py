import pytest

ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Call with (number, passed, detail); the line is echoed in the summary."""

    def record(num, ok, detail):
        line = f"criterion {num}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE[num] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])
