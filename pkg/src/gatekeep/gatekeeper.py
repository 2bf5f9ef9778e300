"""Backup search, candidate construction, switch-time selection and commitment.

A candidate follows the nominal up to a switch time, then a Dubins connector
onto the leader path, then the time-shifted leader replay forever. A candidate
is valid when its nominal prefix and connector clear every zone by the margin;
the replay part is safe because the leader path is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np

from .constraints import SafeSet
from .core import CostConfig, DomainError, InputBounds, Motion, SampledTrajectory, integrate_cost
from .dubins import DubinsWord, PathSet, min_turn_radius, to_motion
from .mission import LeaderPath

_SNAP = 1e-10
_CHUNK = 4  # connectors safety-checked per batch, shortest first


@dataclass(frozen=True)
class GatekeeperConfig:
    T_H: float = 0.5
    replan_period: float = 0.2
    switch_grid_count: int = 21
    backup_join_candidates: int = 20
    T_B_max: float = 3.0
    cost: CostConfig = field(default_factory=CostConfig)
    margin: float = 0.02
    join_lookahead: float = 2.0  # leader-time span ahead of the projection that join points cover

    def __post_init__(self):
        if not self.T_H > 0:
            raise ValueError("T_H must be > 0")
        if not 0 < self.replan_period <= self.T_H:
            raise ValueError("need 0 < replan_period <= T_H")
        if self.switch_grid_count < 2:
            raise ValueError("switch_grid_count must be >= 2")
        if self.backup_join_candidates < 1:
            raise ValueError("backup_join_candidates must be >= 1")
        if not self.T_B_max > 0:
            raise ValueError("T_B_max must be > 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if not self.join_lookahead >= 0:
            raise ValueError("join_lookahead must be >= 0")


@dataclass(frozen=True, eq=False)
class BackupTrajectory:
    """Connector from ``(t_s, x_s)`` onto the leader path, then the leader replay."""

    t_s: float
    x_s: np.ndarray
    motion: Motion
    T_B: float
    join_param: float
    word: DubinsWord
    dt: float

    @property
    def join_time(self) -> float:
        return self.t_s + self.T_B

    @cached_property
    def trajectory(self) -> SampledTrajectory:
        """Grid samples from ``t_s`` through the first sample at or after the join."""
        n = int(math.ceil(self.T_B / self.dt - 1e-9))
        return SampledTrajectory.sample(self.motion, self.t_s, self.dt, n)


def find_backup(t_s: float, x_s, lp: LeaderPath, ss: SafeSet, b: InputBounds, cfg: GatekeeperConfig,
                dt: float = 0.005) -> Optional[BackupTrajectory]:
    """Shortest safe Dubins connector to one of the join points ahead of ``x_s``'s projection."""
    x_s = np.asarray(x_s, dtype=float)
    r = min_turn_radius(b)
    v = b.v_min
    tau0 = lp.project(x_s)
    taus = tau0 + np.linspace(0.0, cfg.join_lookahead, cfg.backup_join_candidates)
    taus = taus[taus <= lp.tf + 1e-12]
    if len(taus) == 0:
        taus = np.array([lp.tf])
    targets = lp.state_at(taus)
    paths = PathSet(x_s, targets, r)
    order = np.argsort(paths.lengths, kind="stable")
    order = order[paths.lengths[order] / v <= cfg.T_B_max + 1e-12]
    for c0 in range(0, len(order), _CHUNK):
        chunk = order[c0:c0 + _CHUNK]
        pts, owner = paths.grid_samples(x_s, chunk, v, dt)
        blocked = np.zeros(len(chunk), dtype=bool)
        blocked[owner[~ss.clears(pts)]] = True
        for m in np.nonzero(~blocked)[0]:
            j = int(chunk[m])
            word = paths.word(j)
            T_B = word.total_length / v
            motion = to_motion(word, x_s, t_s, v, tail=lp.motion, tail_offset=float(taus[j]) - (t_s + T_B))
            return BackupTrajectory(float(t_s), x_s.copy(), motion, T_B, float(taus[j]), word, dt)
    return None


@dataclass(frozen=True, eq=False)
class Candidate:
    t_k: float
    switch_time: float
    trajectory: SampledTrajectory  # grid samples over [t_k, max(t_k + T_H, t_s + T_B)]
    motion: Motion  # exact and defined for all t >= t_k
    backup: Optional[BackupTrajectory]
    valid: bool
    bound: float  # suboptimality bound, equal to j2_cost
    j2_grid: tuple = ()  # (t_s, j2 or None) for every grid switch time, filled by select_candidate

    @property
    def j2_cost(self) -> float:
        return self.bound

    @property
    def T_B(self) -> float:
        return self.backup.T_B if self.backup is not None else math.nan


def _splice(nominal: Motion, t_s: float, tail: Motion) -> Motion:
    j = int(np.searchsorted(nominal.knots, t_s - _SNAP, side="left"))
    return Motion(np.concatenate([nominal.knots[:j], tail.knots]),
                  np.concatenate([nominal.inputs[:j], tail.inputs]),
                  np.concatenate([nominal.knot_states[:j], tail.knot_states]),
                  tail.tail, tail.tail_offset)


def make_candidate(t_k: float, x_k, nominal: SampledTrajectory, t_s: float, lp: LeaderPath, ss: SafeSet,
                   b: InputBounds, cfg: GatekeeperConfig, *, nominal_h: Optional[np.ndarray] = None) -> Candidate:
    """Nominal prefix up to ``t_s`` followed by the backup from ``nominal(t_s)``."""
    dt = nominal.dt
    if abs(nominal.t0 - t_k) > 1e-9:
        raise DomainError(f"nominal starts at {nominal.t0}, not t_k={t_k}")
    if not (t_k - 1e-9 <= t_s <= t_k + cfg.T_H + 1e-9):
        raise DomainError(f"switch time {t_s} outside [{t_k}, {t_k + cfg.T_H}]")
    i_s = nominal.index_of(t_s)
    i_H = nominal.index_of(t_k + cfg.T_H)
    t_s = nominal.t0 + i_s * dt
    if nominal_h is None:
        nominal_h = ss.min_values(nominal.states[:i_s + 1])
    prefix_ok = bool(np.all(nominal_h[:i_s + 1] >= ss.margin))
    x_s = nominal.states[i_s]
    backup = find_backup(t_s, x_s, lp, ss, b, cfg, dt)

    if backup is None:
        # stand in with the nominal itself so the record stays well formed; never valid
        return Candidate(t_k, t_s, nominal, nominal.motion, None, False, math.inf)

    n_B = int(math.ceil(backup.T_B / dt - 1e-9))
    n_tot = max(i_H, i_s + n_B)
    t_tail = nominal.t0 + np.arange(i_s + 1, n_tot + 1) * dt
    states = np.vstack([nominal.states[:i_s + 1], backup.motion.state_at(t_tail).reshape(-1, 3)])
    tail_in = backup.motion.input_at(nominal.t0 + np.arange(i_s, n_tot) * dt).reshape(-1, 2)
    inputs = np.vstack([nominal.inputs[:i_s], tail_in])
    motion = _splice(nominal.motion, t_s, backup.motion)
    traj = SampledTrajectory(nominal.t0, dt, states, inputs, motion)
    j2 = integrate_cost(cfg.cost, traj, nominal, t_s, t_k + cfg.T_H, t_k)
    # re-check the connector on the candidate's own samples, independent of the search
    valid = prefix_ok and bool(np.all(ss.clears(states[i_s + 1:i_s + n_B])))
    return Candidate(t_k, t_s, traj, motion, backup, valid, j2)


def switch_grid(t_k: float, nominal: SampledTrajectory, cfg: GatekeeperConfig) -> np.ndarray:
    """Sample indices of the switch-time grid (uniform over the horizon, snapped to samples)."""
    i_H = nominal.index_of(t_k + cfg.T_H)
    return np.unique(np.round(np.linspace(0, i_H, cfg.switch_grid_count)).astype(int))


@dataclass(frozen=True, eq=False)
class Selection:
    candidate: Optional[Candidate]
    valid_count: int  # valid candidates found before the search stopped
    evaluated: int


def select_candidate(t_k: float, x_k, nominal: SampledTrajectory, lp: LeaderPath, ss: SafeSet, b: InputBounds,
                     cfg: GatekeeperConfig, *, exhaustive: bool = False) -> Selection:
    """Minimum-J2 valid candidate over the switch-time grid, ties going to the latest switch.

    Switch times are scanned from latest to earliest. A candidate with zero
    J2 cannot be beaten, so the scan stops at the first one unless
    ``exhaustive`` is set. Switch times after the nominal's first unsafe
    sample are invalid by construction and skipped.
    """
    idx = switch_grid(t_k, nominal, cfg)
    h = ss.min_values(nominal.states[:idx[-1] + 1])
    bad = np.nonzero(h < ss.margin)[0]
    first_bad = int(bad[0]) if len(bad) else len(h)
    dt = nominal.dt
    grid: dict[int, Optional[float]] = {int(i): None for i in idx}
    best: Optional[Candidate] = None
    valid_count = evaluated = 0
    for i in idx[::-1]:
        if i >= first_bad and not exhaustive:
            continue
        c = make_candidate(t_k, x_k, nominal, nominal.t0 + i * dt, lp, ss, b, cfg, nominal_h=h)
        evaluated += 1
        if not c.valid:
            continue
        valid_count += 1
        grid[int(i)] = c.bound
        if best is None or c.bound < best.bound:
            best = c
        if c.bound == 0.0 and not exhaustive:
            break
    if best is not None:
        best = replace(best, j2_grid=tuple((nominal.t0 + i * dt, grid[i]) for i in sorted(grid)))
    return Selection(best, valid_count, evaluated)


@dataclass(frozen=True, eq=False)
class CommittedTrajectory:
    candidate: Candidate
    commit_time: float
    agent_id: int = 0
    valid_count: int = 0

    @property
    def trajectory(self) -> SampledTrajectory:
        return self.candidate.trajectory

    @property
    def motion(self) -> Motion:
        return self.candidate.motion

    @property
    def switch_time(self) -> float:
        return self.candidate.switch_time

    @property
    def bound(self) -> float:
        return self.candidate.bound


def gatekeeper_step(agent_id: int, t_k: float, x_k, nominal: SampledTrajectory,
                    committed_prev: Optional[CommittedTrajectory], lp: LeaderPath, ss: SafeSet, b: InputBounds,
                    cfg: GatekeeperConfig) -> Optional[CommittedTrajectory]:
    """Commit the selected valid candidate, or keep ``committed_prev`` if there is none."""
    sel = select_candidate(t_k, x_k, nominal, lp, ss, b, cfg)
    if sel.candidate is None:
        return committed_prev
    return CommittedTrajectory(sel.candidate, float(t_k), agent_id, sel.valid_count)


def suboptimality_report(c: Candidate) -> tuple[float, tuple]:
    """The bound and the per-switch-time J2 grid recorded at selection."""
    if not c.valid:
        raise ValueError("suboptimality bound is only defined for valid candidates")
    return c.bound, c.j2_grid


class InitialCommitFailure(RuntimeError):
    """No valid pure-backup candidate exists at the initial time."""


def initial_commit(agent_id: int, t0: float, x0, nominal: SampledTrajectory, lp: LeaderPath, ss: SafeSet,
                   b: InputBounds, cfg: GatekeeperConfig) -> CommittedTrajectory:
    """Seed the recursion with the pure backup candidate (switch at ``t0``)."""
    c = make_candidate(t0, x0, nominal, t0, lp, ss, b, cfg)
    if not c.valid:
        raise InitialCommitFailure(f"agent {agent_id}: no safe backup from the initial state at t={t0}")
    return CommittedTrajectory(c, float(t0), agent_id, 1)


__all__ = [
    "GatekeeperConfig", "BackupTrajectory", "Candidate", "Selection", "CommittedTrajectory", "InitialCommitFailure",
    "find_backup", "make_candidate", "switch_grid", "select_candidate", "gatekeeper_step", "suboptimality_report",
    "initial_commit",
]
