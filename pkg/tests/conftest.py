import pytest

# filled by the acceptance tests: criterion number -> (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def report(number: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, f"{name}: {detail}")
    print(f"criterion {number} {'PASS' if passed else 'FAIL'} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def acceptance_report():
    return report
