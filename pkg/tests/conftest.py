"""Collects acceptance-criterion results and prints one PASS/FAIL line each."""

_CRITERIA: list[tuple[int, bool, str, str]] = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    _CRITERIA.append((number, ok, title, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, title, detail in sorted(_CRITERIA):
        status = "PASS" if ok else "FAIL"
        line = f"{status}  criterion {number:2d}  {title}"
        if detail:
            line += f" — {detail}"
        terminalreporter.write_line(line)
