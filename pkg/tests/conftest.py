import functools

import pytest

from ricci_lab.cli import build_scenario, monitor_trace, resolve
from ricci_lab.flow import FlowConfig, run_flow

_OUTCOMES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, text): acceptance criterion checked by this test")
    config.addinivalue_line("markers", "slow: runs a full preset")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    num, text = mark.args
    ok = rep.passed if rep.when == "call" else not rep.failed
    prev = _OUTCOMES.get(num, (text, True))
    if rep.when == "call" or not ok:
        _OUTCOMES[num] = (text, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_OUTCOMES):
        text, ok = _OUTCOMES[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {text}")


class Scenario:
    """A preset run through the flow and the monitor, cached per session."""

    def __init__(self, name):
        self.name = name
        self.cfg = resolve({"preset": name})
        m0, phi0, alpha = build_scenario(self.cfg)
        self.m0, self.phi0, self.alpha = m0, phi0, alpha
        self.trace = run_flow(m0, FlowConfig(**self.cfg["flow"]), form=phi0)
        self.verdict = monitor_trace(self.trace, self.cfg)
        self.reports = {r["name"]: r for r in self.verdict["reports"]}


@functools.lru_cache(maxsize=None)
def _scenario(name):
    return Scenario(name)


@pytest.fixture(scope="session")
def scenario():
    return _scenario
