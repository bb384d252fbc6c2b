"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

_criteria = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    summary = dict(report.user_properties).get("summary", "")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[name] = (report.outcome, summary)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        outcome, summary = _criteria[name]
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"criterion {name.split('_')[2]}: {status}  {summary}")
