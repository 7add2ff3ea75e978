"""Collects acceptance-criterion outcomes and prints one line per criterion."""

_outcomes: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        ok = call.excinfo is None
        detail = dict(item.user_properties).get("detail", "")
        _outcomes[number] = ("PASS" if ok else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status, title, detail = _outcomes[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
