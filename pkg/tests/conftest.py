from __future__ import annotations

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if hasattr(report, "wasxfail"):
            outcome = "PASS" if report.passed else "FAIL (expected failure, analysed in the notes)"
        else:
            outcome = "PASS" if report.passed else "FAIL"
        _RESULTS[props["criterion"]] = (outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        outcome, detail = _RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {outcome}  {detail}")
