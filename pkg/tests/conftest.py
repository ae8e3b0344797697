from __future__ import annotations

import pytest

_OUTCOMES: dict[int, list[tuple[bool, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if not rep.passed and not detail:
            detail = rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") \
                else str(rep.longrepr).splitlines()[-1]
        _OUTCOMES.setdefault(int(mark.args[0]), []).append((rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        runs = _OUTCOMES[n]
        ok = all(p for p, _ in runs)
        detail = " | ".join(d for _, d in runs if d)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
