from pathlib import Path

import pytest

from ismd import cli


def snapshot(root) -> dict[str, bytes]:
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny") / "out"
    assert cli.main(["--profile", "tiny", "--out", str(out), "run", "--all"]) == 0
    return out


# --- acceptance reporting ---------------------------------------------------

_criteria: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    mark = getattr(report, "criterion", None)
    if mark is None:
        return
    rec = _criteria.setdefault(mark, {"passed": True, "seen": False, "details": []})
    if report.when == "call":
        rec["seen"] = True
        rec["details"] += [str(v) for k, v in report.user_properties if k == "detail"]
    if report.failed or (report.when == "setup" and report.skipped):
        rec["passed"] = False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m:
        outcome.get_result().criterion = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, rec in _criteria.items():
        ok = rec["passed"] and rec["seen"]
        detail = "; ".join(rec["details"])
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else ""))
