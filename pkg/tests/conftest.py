import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(code, title): acceptance criterion")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (report.when != "call" and report.passed):
        return
    code, title = mark.args
    entry = _RESULTS.setdefault(code, {"title": title, "ok": True, "failed": []})
    if not report.passed:
        entry["ok"] = False
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for code in sorted(_RESULTS, key=lambda c: int(c[2:])):
        e = _RESULTS[code]
        status = "PASS" if e["ok"] else "FAIL"
        extra = "" if e["ok"] else f"  ({', '.join(e['failed'])})"
        terminalreporter.write_line(f"{code:<5} {status}  {e['title']}{extra}")
