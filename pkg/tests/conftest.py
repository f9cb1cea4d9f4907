"""Collects one verdict line per acceptance criterion and prints them at the end."""

CRITERIA: dict = {}


def record(key: str, ok: bool, detail: str):
    CRITERIA[key] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (int(k.rstrip("ab")), k)):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
