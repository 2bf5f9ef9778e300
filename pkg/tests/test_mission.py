import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gatekeep.constraints import EngagementZone, SafeSet, trajectory_safe
from gatekeep.core import AgentState, ControlInput, InputBounds, InvalidInput, SampledTrajectory, step
from gatekeep.mission import (
    DEFAULT_GAINS,
    FormationOffset,
    LeaderPath,
    PlanningFailure,
    backup_controller,
    offset_nominal,
    offset_reference,
    plan_leader_path,
    tracking_control,
)

B = InputBounds()


def _straight_leader(n=1200, v=0.9, theta=0.0):
    tr = SampledTrajectory.from_inputs((0.0, 0.0, theta), 0.0, 0.005, [(v, 0.0)] * n)
    return LeaderPath.from_trajectory(tr, B)


def _replay(lp, tau, t_join, duration):
    """Integrate the backup controller exactly, splitting at the shifted leader knots."""
    x = lp.state_at(tau)
    knots = lp.trajectory.times
    cuts = knots[(knots > tau) & (knots < tau + duration)] - tau + t_join
    edges = np.concatenate([[t_join], cuts, [t_join + duration]])
    for a, b in zip(edges[:-1], edges[1:]):
        u = backup_controller(lp, 0.5 * (a + b), t_join, tau)
        x = step(*x, u.v, u.omega, b - a)
    return np.array(x)


def _pair(u):
    return (u.v, u.omega)


def test_formation_offset_finite():
    with pytest.raises(InvalidInput):
        FormationOffset(float("nan"), 0)


def test_tracking_zero_error_returns_reference():
    s = AgentState(1, 2, 0.3)
    assert tracking_control(s, s, ControlInput(0.9, 2.0), B) == ControlInput(0.9, 2.0)
    assert tracking_control(s, s, ControlInput(0.9, 40.0), B) == ControlInput(0.9, 10.0)


@given(st.floats(0, 2), st.floats(-1, 1), st.floats(-1, 1))
def test_tracking_forward_error_speeds_up(ex, ey, th):
    ref = AgentState(ex * math.cos(th) - ey * math.sin(th), ex * math.sin(th) + ey * math.cos(th), th)
    u = tracking_control(AgentState(0, 0, th), ref, ControlInput(0.85, 0.0), B)
    assert u.v >= 0.85 - 1e-12
    assert u.admissible(B)


@pytest.mark.parametrize("err", [(0, 0.1, 0), (0, -0.1, 0), (0.1, 0, 0), (-0.1, 0, 0), (0, 0, 0.1)])
def test_closed_loop_decay_within_two_time_units(err):
    lp = _straight_leader()
    x0 = (err[0], err[1], err[2])
    nom = offset_nominal(lp, FormationOffset(), B, 0.0, x0, 3.0, 0.005)
    ref, _ = offset_reference(lp, FormationOffset(), nom.times)
    e = np.hypot(*(nom.states[:, :2] - ref[:, :2]).T)
    i = int(round(2.0 / 0.005))
    assert np.max(e[i:]) < 1e-3


def test_zero_offset_on_leader_matches_leader(blocked_leader):
    lp, _, _ = blocked_leader
    nom = offset_nominal(lp, FormationOffset(), B, 1.0, lp.state_at(1.0), 2.0, 0.005)
    i0 = int(round(1.0 / 0.005))
    assert np.max(np.abs(nom.inputs - lp.trajectory.inputs[i0:i0 + nom.n])) < 1e-6


def test_lateral_offset_converges_to_parallel_line():
    lp = _straight_leader()
    nom = offset_nominal(lp, FormationOffset(0.5), B, 0.0, (0, 0, 0), 4.0, 0.005)
    tail = nom.states[nom.times >= 2.5]
    assert np.max(np.abs(tail[:, 1] - 0.5)) < 1e-3
    assert nom.dynamics_residual() < 1e-12


def test_tight_offset_saturates_but_stays_feasible():
    # leader on a tight circle, follower offset to the inside needs a smaller radius than allowed
    tr = SampledTrajectory.from_inputs((0, 0, 0), 0.0, 0.005, [(0.8, 9.0)] * 800)
    lp = LeaderPath.from_trajectory(tr, B)
    nom = offset_nominal(lp, FormationOffset(0.05), B, 0.0, (0, 0.05, 0), 3.0, 0.005)
    assert B.contains(nom.inputs[:, 0], nom.inputs[:, 1], 1e-12)
    assert np.any(np.isclose(np.abs(nom.inputs[:, 1]), B.omega_max)) or np.any(nom.inputs[:, 0] == B.v_min)
    assert nom.dynamics_residual() < 1e-12
    ref, _ = offset_reference(lp, FormationOffset(0.05), nom.times)
    assert np.max(np.hypot(*(nom.states[:, :2] - ref[:, :2]).T)[200:]) > 1e-3


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-3, 3))
def test_offset_nominal_always_feasible(lat, lon, dx, dy, th):
    lp = _straight_leader(400)
    nom = offset_nominal(lp, FormationOffset(lat, lon), B, 0.5, (dx, dy, th), 1.0, 0.005)
    assert B.contains(nom.inputs[:, 0], nom.inputs[:, 1], 1e-12)
    assert nom.dynamics_residual() < 1e-12


def test_backup_controller_formula(blocked_leader):
    lp, _, _ = blocked_leader
    tau = 1.2345
    assert _pair(backup_controller(lp, 7.0, 7.0, tau)) == tuple(lp.input_at(tau))
    assert _pair(backup_controller(lp, 7.5, 7.0, tau)) == tuple(lp.input_at(tau + 0.5))
    with pytest.raises(ValueError):
        backup_controller(lp, 6.0, 7.0, tau)


def test_backup_replay_is_invariant(blocked_leader, rng):
    lp, _, _ = blocked_leader
    for _ in range(10):
        tau = rng.uniform(lp.t0, lp.tf)
        t_join = rng.uniform(0, 20)
        end = _replay(lp, tau, t_join, lp.tf - tau + 0.3)  # includes part of the loiter
        target = lp.state_at(lp.tf + 0.3)
        assert np.hypot(*(end[:2] - target[:2])) < 1e-6


def test_leader_states_are_safe(blocked_leader):
    lp, ss, _ = blocked_leader
    assert np.all(ss.min_values(lp.trajectory.states) >= ss.margin)
    assert np.all(ss.min_values(lp.loiter_states()) >= ss.margin)
    assert trajectory_safe(ss, lp.trajectory, lp.t0, lp.tf)[0]
    assert B.contains(lp.trajectory.inputs[:, 0], lp.trajectory.inputs[:, 1], 1e-12)
    assert lp.trajectory.dynamics_residual() < 1e-9
    assert math.hypot(*(lp.trajectory.states[-1, :2] - (6, 0))) < 0.05


def test_blocked_path_detours_around_zone(blocked_leader):
    lp, ss, _ = blocked_leader
    assert lp.length > 6.0 + 0.1
    direct = SampledTrajectory.from_inputs((0, 0, 0), 0, 0.005, [(0.9, 0.0)] * 1333)
    assert not trajectory_safe(ss, direct, 0, direct.t_end)[0]


def test_empty_safe_set_straight_path():
    lp = plan_leader_path(AgentState(0, 0, 0), AgentState(6, 0, 0), SafeSet(()), B, seed=1)
    assert lp.length == pytest.approx(6.0, abs=0.9 * 0.005)
    assert np.max(np.abs(lp.trajectory.states[:, 1])) < 1e-12


def test_planner_deterministic_in_seed():
    zones = (EngagementZone((3.0, 0.1), 0.3, 0.8, 0.4, 2.0),)
    ss = SafeSet(zones, 0.02)
    a = plan_leader_path(AgentState(0, 0, 0), AgentState(6, 0, 0), ss, B, seed=7)
    b = plan_leader_path(AgentState(0, 0, 0), AgentState(6, 0, 0), ss, B, seed=7)
    assert np.array_equal(a.trajectory.states, b.trajectory.states)
    assert np.array_equal(a.trajectory.inputs, b.trajectory.inputs)


def test_planning_failure_when_goal_enclosed():
    ss = SafeSet((EngagementZone((6, 0), 0, 1.0, 1.0),), 0.02)
    with pytest.raises(PlanningFailure):
        plan_leader_path(AgentState(0, 0, 0), AgentState(6, 0, 0), ss, B, seed=0)


def test_unsafe_external_path_rejected():
    tr = SampledTrajectory.from_inputs((0, 0, 0), 0.0, 0.005, [(0.9, 0.0)] * 400)
    ss = SafeSet((EngagementZone((1.0, 0.0), 0, 0.3, 0.3),), 0.02)
    with pytest.raises(PlanningFailure):
        LeaderPath.from_trajectory(tr, B, ss)
    bad = SampledTrajectory.from_inputs((0, 0, 0), 0.0, 0.005, [(0.5, 0.0)] * 10)
    with pytest.raises(InvalidInput):
        LeaderPath.from_trajectory(bad, B)


def test_loiter_direction_picks_safe_side():
    tr = SampledTrajectory.from_inputs((0, 0, 0), 0.0, 0.005, [(0.9, 0.0)] * 400)
    # zone just left of the end point: the left loiter would enter it
    ss = SafeSet((EngagementZone((1.8, 0.2), 0, 0.1, 0.1),), 0.02)
    lp = LeaderPath.from_trajectory(tr, B, ss)
    assert lp.loiter_sign == -1
    assert lp.check(ss)[0]


def test_backward_extension_is_straight():
    lp = _straight_leader(200, theta=0.5)
    s = lp.state_at(-1.0)
    assert np.allclose(s, (-0.9 * math.cos(0.5), -0.9 * math.sin(0.5), 0.5))
    assert tuple(lp.input_at(-1.0)) == (0.9, 0.0)


def test_default_gains_recorded():
    assert DEFAULT_GAINS == (4.0, 25.0, 10.0)
