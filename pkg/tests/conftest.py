import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blocked_leader():
    """A leader path planned around one zone sitting on the straight line."""
    from gatekeep.constraints import EngagementZone, SafeSet
    from gatekeep.core import AgentState, InputBounds
    from gatekeep.mission import plan_leader_path

    zones = (EngagementZone((3.0, 0.1), 0.3, 0.8, 0.4, 2.0),)
    ss = SafeSet(zones, 0.02)
    b = InputBounds()
    lp = plan_leader_path(AgentState(0, 0, 0), AgentState(6, 0, 0), ss, b, seed=7)
    return lp, ss, b


@pytest.fixture(scope="session")
def field_runs():
    """Both methods on one generated zone field, sharing the planned leader."""
    from gatekeep.mission import plan_leader_path
    from gatekeep.scenario import generate_scenario, parse_scenario
    from gatekeep.sim import Method, run

    sc = parse_scenario(generate_scenario(3, 13))
    lp = plan_leader_path(sc.leader_start, sc.leader_goal, sc.safe_set(), sc.bounds, sc.seed, dt=sc.dt,
                          iterations=sc.planner_iterations)
    return sc, lp, {m: run(sc, m, leader=lp) for m in Method}


def pytest_terminal_summary(terminalreporter):
    from cases import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
