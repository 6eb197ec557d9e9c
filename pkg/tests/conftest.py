"""Collects the acceptance outcomes and prints one PASS/FAIL line per criterion."""

_RESULTS = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = dict(report.user_properties).get("detail", "")
        _RESULTS[report.nodeid] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (status, detail) in sorted(_RESULTS.items()):
        name = nodeid.split("::")[-1].removeprefix("test_")
        terminalreporter.write_line(f"{status}  {name}  {detail}")
