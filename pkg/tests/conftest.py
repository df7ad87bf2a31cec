import pytest

# criterion number -> (title, passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture
def record():
    def _record(number, title, passed, detail=""):
        ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}  {detail}")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}  {detail}")
