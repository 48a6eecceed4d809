"""Shared pytest wiring: collects acceptance verdicts and prints them in the
terminal summary, where they survive output capture."""

from __future__ import annotations

import re

import pytest

_LINES: list[str] = []
_RECORDED: set[int] = set()


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def verdict(num: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {num:02d} {'PASS' if ok else 'FAIL'} - {title}: {detail}"
        _LINES.append(line)
        _RECORDED.add(num)
        print(line)
        assert ok, line

    return verdict


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    # a criterion test that died before reaching its verdict still gets a line
    if report.when == "call" and report.failed:
        m = re.match(r"test_criterion_(\d+)", item.name)
        if m and int(m.group(1)) not in _RECORDED:
            num = int(m.group(1))
            _RECORDED.add(num)
            _LINES.append(f"criterion {num:02d} FAIL - crashed before verdict "
                          f"({report.longreprtext.splitlines()[-1][:120]})")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
