"""Shared fixtures: bundled mission logs are simulated once per session."""

from __future__ import annotations

import time
from dataclasses import dataclass

import pytest

from vrbsim.scenario import Scenario, load_scenario
from vrbsim.sim import Mission, SimLog

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@dataclass
class MissionRun:
    scenario: Scenario
    log: SimLog
    runtime: float


_CACHE: dict[tuple, MissionRun] = {}


def run_bundled(name: str, *overrides: str) -> MissionRun:
    """Simulate a bundled scenario once per session and reuse the result."""
    key = (name, overrides)
    if key not in _CACHE:
        sc = load_scenario(name, list(overrides))
        start = time.perf_counter()
        log = Mission(sc).run()
        _CACHE[key] = MissionRun(sc, log, time.perf_counter() - start)
    return _CACHE[key]


@pytest.fixture(scope="session")
def table1_run() -> MissionRun:
    return run_bundled("triangle_establish")


@pytest.fixture(scope="session")
def table2_run() -> MissionRun:
    return run_bundled("table2_mission")


@pytest.fixture(scope="session")
def table3_run() -> MissionRun:
    return run_bundled("table3_mission")


@pytest.fixture(scope="session")
def cube_establish_run() -> MissionRun:
    return run_bundled("cube_establish")


@pytest.fixture(scope="session")
def cube_waypoint_run() -> MissionRun:
    return run_bundled("cube_waypoint")


APPENDIX = ("two_agent_line", "four_agent_square", "five_agent_pyramid", "six_agent_hexagon")


@pytest.fixture(scope="session")
def appendix_runs() -> dict[str, MissionRun]:
    return {name: run_bundled(name) for name in APPENDIX}


@pytest.fixture
def record_acceptance():
    """Record one criterion's verdict; the summary prints every recorded line."""

    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
