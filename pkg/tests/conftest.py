"""Per-criterion PASS/FAIL summary for tests marked ``criterion``."""

_CRITERIA: dict[str, tuple[int, str]] = {}
_RESULTS: dict[int, list[str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _CRITERIA[item.nodeid] = (mark.args[0], mark.args[1])


def pytest_runtest_logreport(report):
    entry = _CRITERIA.get(report.nodeid)
    if entry is None:
        return
    outcomes = _RESULTS.setdefault(entry[0], [])
    if report.failed:
        outcomes.append("failed")
    elif report.when == "call":
        outcomes.append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    titles = {n: title for n, title in _CRITERIA.values()}
    terminalreporter.section("acceptance criteria")
    for n in sorted(titles):
        got = _RESULTS.get(n, [])
        if not got:
            status = "NOT RUN"
        elif "failed" in got:
            status = "FAIL"
        elif all(o == "passed" for o in got):
            status = "PASS"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"criterion {n:>2}: {status:<7} {titles[n]}")
