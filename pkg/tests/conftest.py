from acceptance_log import ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {status} - {detail}")
