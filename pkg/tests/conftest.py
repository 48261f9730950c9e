"""Collects acceptance-criterion verdicts and prints one line per criterion
at the end of the run, whatever the capture settings."""

_VERDICTS: list[tuple[str, bool, str]] = []


def record_verdict(name: str, ok: bool, detail: str) -> None:
    _VERDICTS.append((name, ok, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
