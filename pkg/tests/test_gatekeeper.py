import math
from dataclasses import replace

import numpy as np
import pytest

from gatekeep.constraints import EngagementZone, SafeSet
from gatekeep.core import DomainError, InputBounds, SampledTrajectory, integrate_cost
from gatekeep.dubins import min_turn_radius, shortest_path
from gatekeep.gatekeeper import (
    CommittedTrajectory,
    GatekeeperConfig,
    InitialCommitFailure,
    find_backup,
    gatekeeper_step,
    initial_commit,
    make_candidate,
    select_candidate,
    suboptimality_report,
    switch_grid,
)
from gatekeep.mission import FormationOffset, LeaderPath, offset_nominal

B = InputBounds()
CFG = GatekeeperConfig()
DT = 0.005


@pytest.fixture(scope="module")
def straight():
    tr = SampledTrajectory.from_inputs((0.0, 0.0, 0.0), 0.0, DT, [(0.9, 0.0)] * 2400)
    return LeaderPath.from_trajectory(tr, B)


def _nominal(lp, off, t_k, x_k, ss=None):
    return offset_nominal(lp, FormationOffset(*off), B, t_k, x_k, CFG.T_H, DT)


def _simulate(motion, x0, times):
    """Re-propagate the candidate's control sequence from ``x0`` through ``times``."""
    out = np.empty((len(times), 3))
    x = tuple(float(c) for c in x0)
    out[0] = x
    for i in range(1, len(times)):
        x = motion.propagate(x, times[i - 1], times[i])
        out[i] = x
    return out


def test_config_validation():
    for bad in (dict(T_H=0), dict(replan_period=0.6), dict(switch_grid_count=1), dict(backup_join_candidates=0),
                dict(T_B_max=0), dict(margin=-1), dict(join_lookahead=-1)):
        with pytest.raises(ValueError):
            GatekeeperConfig(**bad)


# --- find_backup -------------------------------------------------------------


def test_backup_on_path_is_pure_replay(straight):
    x_s = straight.trajectory.states[100]
    bk = find_backup(0.5, x_s, straight, SafeSet(()), B, CFG)
    assert bk.T_B == 0 and bk.word.total_length == 0
    assert bk.join_param == pytest.approx(0.5)
    t = 0.5 + np.linspace(0, 3, 50)
    assert np.allclose(bk.motion.state_at(t), straight.state_at(t), atol=1e-12)


def test_backup_lateral_offset_is_best_join(straight):
    x_s = np.array([1.0, 0.5, 0.0])
    bk = find_backup(2.0, x_s, straight, SafeSet(()), B, CFG)
    assert bk.T_B == pytest.approx(bk.word.total_length / B.v_min)
    # exhaustive check against the same join points
    tau0 = straight.project(x_s)
    taus = tau0 + np.linspace(0, CFG.join_lookahead, CFG.backup_join_candidates)
    lengths = [shortest_path(x_s, straight.state_at(t), min_turn_radius(B)).total_length for t in taus]
    assert bk.word.total_length == pytest.approx(min(lengths), abs=1e-12)
    # ten times denser join points contain ours, so they can only do better or equal
    dense = find_backup(2.0, x_s, straight, SafeSet(()), B, replace(CFG, backup_join_candidates=191))
    assert dense.word.total_length <= bk.word.total_length + 1e-12
    assert bk.word.total_length - dense.word.total_length < 0.05
    end = bk.motion.state_at(bk.join_time)
    assert np.hypot(*(end[:2] - straight.state_at(bk.join_param)[:2])) < 1e-6
    assert bk.trajectory.t0 == 2.0 and np.allclose(bk.trajectory.states[0], x_s)


def test_backup_none_when_all_blocked(straight):
    x_s = np.array([1.0, 0.5, 0.0])
    ss = SafeSet((EngagementZone((1.0, 0.5), 0, 0.3, 0.3),), 0.02)
    assert find_backup(0.0, x_s, straight, ss, B, CFG) is None
    assert find_backup(0.0, x_s, straight, SafeSet(()), B, replace(CFG, T_B_max=0.1)) is None


def test_backup_inputs_follow_leader_after_join(blocked_leader):
    lp, ss, _ = blocked_leader
    x_s = lp.state_at(1.0) + np.array([0.0, 0.4, 0.2])
    bk = find_backup(3.0, x_s, lp, ss, B, CFG)
    t = bk.join_time + np.linspace(0.01, 2.0, 40)
    assert np.allclose(bk.motion.input_at(t), lp.input_at(t - bk.join_time + bk.join_param))


# --- make_candidate ----------------------------------------------------------


def test_candidate_full_horizon_on_path_is_free(straight):
    nom = _nominal(straight, (0, 0), 1.0, straight.state_at(1.0))
    c = make_candidate(1.0, nom.states[0], nom, 1.5, straight, SafeSet(()), B, CFG)
    assert c.valid and c.bound == 0.0
    assert c.T_B == pytest.approx(0.0, abs=1e-12)


def test_pure_backup_candidate_cost_is_full_window(straight):
    x_k = np.array([1.0, 0.5, 0.0])
    nom = _nominal(straight, (0.5, 0), 1.0, x_k)
    c = make_candidate(1.0, x_k, nom, 1.0, straight, SafeSet(()), B, CFG)
    assert c.valid
    full = integrate_cost(CFG.cost, c.trajectory, nom, 1.0, 1.5, 1.0)
    assert c.bound == full and full > 0


def test_candidate_errors(straight):
    nom = _nominal(straight, (0, 0), 1.0, straight.state_at(1.0))
    with pytest.raises(DomainError):
        make_candidate(1.0, nom.states[0], nom, 1.6, straight, SafeSet(()), B, CFG)
    with pytest.raises(DomainError):
        make_candidate(1.0, nom.states[0], nom, 1.0012, straight, SafeSet(()), B, CFG)
    with pytest.raises(DomainError):
        make_candidate(0.9, nom.states[0], nom, 1.0, straight, SafeSet(()), B, CFG)


def test_unsafe_nominal_prefix_invalidates(blocked_leader):
    lp, ss, _ = blocked_leader
    inside = np.array([3.0, 0.1, 0.0])
    nom = SampledTrajectory.from_inputs(inside, 0.0, DT, [(0.9, 0.0)] * 100)
    c = make_candidate(0.0, inside, nom, 0.25, lp, ss, B, CFG)
    assert not c.valid
    sel = select_candidate(0.0, inside, nom, lp, ss, B, CFG)
    assert sel.candidate is None and sel.valid_count == 0


def _commit_cases(lp, ss, n=6):
    """Follower states along the offset curves, nominal built from each."""
    cases = []
    for lat in (0.5, -0.5):
        for t_k in np.linspace(lp.t0 + 0.5, lp.tf - 1.0, n):
            t_k = round(t_k / DT) * DT
            ref = lp.state_at(t_k)
            x_k = ref + np.array([-lat * math.sin(ref[2]), lat * math.cos(ref[2]), 0.0])
            cases.append((t_k, x_k, _nominal(lp, (lat, 0), t_k, x_k)))
    return cases


def test_candidates_satisfy_constraints(blocked_leader):
    lp, ss, _ = blocked_leader
    checked = 0
    for t_k, x_k, nom in _commit_cases(lp, ss):
        for i in switch_grid(t_k, nom, CFG)[::5]:
            c = make_candidate(t_k, x_k, nom, nom.t0 + i * DT, lp, ss, B, CFG)
            # prefix matches the nominal bit for bit
            assert np.array_equal(c.trajectory.states[:i + 1], nom.states[:i + 1])
            assert np.array_equal(c.trajectory.inputs[:i], nom.inputs[:i])
            if not c.valid:
                continue
            checked += 1
            tr = c.trajectory
            assert tr.dynamics_residual() < 1e-9
            assert np.array_equal(tr.states[0], x_k)
            assert B.contains(tr.inputs[:, 0], tr.inputs[:, 1], 1e-9)
            j = c.backup.join_time
            assert np.hypot(*(c.motion.state_at(j)[:2] - lp.state_at(c.backup.join_param)[:2])) < 1e-6
            # re-simulated control sequence stays safe well past the join
            end = c.switch_time + c.T_B + 3 * CFG.T_B_max
            times = t_k + np.arange(int(math.ceil((end - t_k) / DT)) + 1) * DT
            sim = _simulate(c.motion, x_k, times)
            assert np.all(ss.min_values(sim) >= ss.margin)
            assert np.allclose(sim[:tr.n + 1], tr.states, atol=1e-9)
            # the prefix cost term vanishes, so the full-window cost is the bound
            full = integrate_cost(CFG.cost, tr, nom, t_k, t_k + CFG.T_H, t_k)
            assert abs(full - c.bound) < 1e-9
    assert checked > 10


# --- selection ---------------------------------------------------------------


def test_select_safe_nominal_uses_full_horizon(straight):
    nom = _nominal(straight, (0, 0), 2.0, straight.state_at(2.0))
    sel = select_candidate(2.0, nom.states[0], nom, straight, SafeSet(()), B, CFG)
    assert sel.candidate.switch_time == pytest.approx(2.5)
    assert sel.candidate.j2_cost == 0.0
    assert sel.evaluated == 1
    bound, grid = suboptimality_report(sel.candidate)
    assert bound == 0.0 and len(grid) == CFG.switch_grid_count


def _exhaustive(t_k, x_k, nom, lp, ss):
    best = None
    for i in switch_grid(t_k, nom, CFG):
        c = make_candidate(t_k, x_k, nom, nom.t0 + i * DT, lp, ss, B, CFG)
        if c.valid and (best is None or c.bound <= best.bound):
            best = c
    return best


def test_selection_is_grid_minimum(blocked_leader):
    lp, ss, _ = blocked_leader
    diverted = 0
    for t_k, x_k, nom in _commit_cases(lp, ss, n=10):
        sel = select_candidate(t_k, x_k, nom, lp, ss, B, CFG)
        ref = _exhaustive(t_k, x_k, nom, lp, ss)
        full = select_candidate(t_k, x_k, nom, lp, ss, B, CFG, exhaustive=True)
        if ref is None:
            assert sel.candidate is None
            continue
        assert sel.candidate.bound == ref.bound == full.candidate.bound
        assert sel.candidate.switch_time == ref.switch_time == full.candidate.switch_time
        if np.any(ss.min_values(nom.states) < ss.margin):
            diverted += 1
            assert sel.candidate.valid
    assert diverted >= 1


def test_selection_ties_go_to_latest(straight):
    # constant-offset nominal that is already the reference: every valid candidate with t_s at the
    # horizon has j2 = 0, so the latest switch must win
    nom = _nominal(straight, (0, 0), 3.0, straight.state_at(3.0))
    sel = select_candidate(3.0, nom.states[0], nom, straight, SafeSet(()), B, CFG, exhaustive=True)
    zeros = [t for t, j in sel.candidate.j2_grid if j == 0.0]
    assert len(zeros) == CFG.switch_grid_count
    assert sel.candidate.switch_time == max(zeros)


def test_gatekeeper_step_commit_and_fallback(blocked_leader):
    lp, ss, _ = blocked_leader
    t_k, x_k, nom = _commit_cases(lp, ss, n=2)[0]
    prev = initial_commit(0, t_k, x_k, nom, lp, ss, B, CFG)
    assert prev.switch_time == t_k and prev.candidate.valid
    new = gatekeeper_step(0, t_k, x_k, nom, prev, lp, ss, B, CFG)
    assert isinstance(new, CommittedTrajectory) and new.commit_time == t_k and new.candidate.valid
    inside = np.array([3.0, 0.1, 0.0])
    bad = SampledTrajectory.from_inputs(inside, t_k, DT, [(0.9, 0.0)] * 100)
    assert gatekeeper_step(0, t_k, inside, bad, prev, lp, ss, B, CFG) is prev


def test_initial_commit_failure(blocked_leader):
    lp, ss, _ = blocked_leader
    inside = np.array([3.0, 0.1, 0.0])
    nom = SampledTrajectory.from_inputs(inside, 0.0, DT, [(0.9, 0.0)] * 100)
    with pytest.raises(InitialCommitFailure):
        initial_commit(0, 0.0, inside, nom, lp, ss, B, CFG)


def test_suboptimality_report_requires_valid(blocked_leader):
    lp, ss, _ = blocked_leader
    inside = np.array([3.0, 0.1, 0.0])
    nom = SampledTrajectory.from_inputs(inside, 0.0, DT, [(0.9, 0.0)] * 100)
    with pytest.raises(ValueError):
        suboptimality_report(make_candidate(0.0, inside, nom, 0.0, lp, ss, B, CFG))


def test_switch_grid_shape():
    nom = SampledTrajectory.from_inputs((0, 0, 0), 0.0, DT, [(0.9, 0.0)] * 100)
    idx = switch_grid(0.0, nom, CFG)
    assert idx[0] == 0 and idx[-1] == 100 and len(idx) == 21
