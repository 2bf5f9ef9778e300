"""Closed-loop multi-agent simulation for the gatekeeper and the CBF-QP baseline.

Agent 0 is the leader (zero offset); agents 1.. are followers with the
scenario's formation offsets. Every replan tick each agent gets a fresh
nominal from the tracking law; the selected method then decides what is
actually flown until the next tick.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .baseline import CbfConfig, solve_cbf_qp
from .constraints import SafeSet
from .core import AgentState, InputBounds, SampledTrajectory, integrate_cost, step, wrap_angle
from .dubins import min_turn_radius
from .gatekeeper import (
    Candidate,
    CommittedTrajectory,
    GatekeeperConfig,
    gatekeeper_step,
    initial_commit,
)
from .mission import (
    DEFAULT_GAINS,
    FormationOffset,
    LeaderPath,
    _track,
    offset_nominal,
    offset_reference,
    plan_leader_path,
)

log = logging.getLogger(__name__)


class Method(str, Enum):
    GATEKEEPER = "gatekeeper"
    CBF_QP = "cbf_qp"


class ScenarioError(ValueError):
    """Scenario violates a load-time invariant; ``path`` names the offending field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass(frozen=True, eq=False)
class Scenario:
    zones: tuple = ()
    leader_start: AgentState = AgentState(0.0, 0.0, 0.0)
    leader_goal: AgentState = AgentState(8.0, 0.0, 0.0)
    offsets: tuple = (FormationOffset(0.5, 0.0), FormationOffset(-0.5, 0.0))
    bounds: InputBounds = InputBounds()
    gk: GatekeeperConfig = GatekeeperConfig()
    cbf: CbfConfig = CbfConfig()
    duration: Optional[float] = None  # defaults to the leader path's duration
    dt: float = 0.005
    seed: int = 0
    planner_iterations: int = 400
    leader_path: Optional[LeaderPath] = None  # externally supplied, bypasses the planner

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "offsets", tuple(self.offsets))
        if not self.dt > 0:
            raise ScenarioError("sim.dt", "must be > 0")
        if self.duration is not None and not self.duration > 0:
            raise ScenarioError("sim.duration", "must be > 0")
        for name, ratio in (("gatekeeper.T_H", self.gk.T_H), ("gatekeeper.replan_period", self.gk.replan_period)):
            if abs(ratio / self.dt - round(ratio / self.dt)) > 1e-6:
                raise ScenarioError(name, f"must be a multiple of dt={self.dt}")
        clearance = 2 * min_turn_radius(self.bounds) + self.gk.margin
        for name, s in (("leader.start", self.leader_start), ("leader.goal", self.leader_goal)):
            for j, z in enumerate(self.zones):
                gap = math.hypot(s.x - z.center[0], s.y - z.center[1]) - z.R_max
                if gap < clearance:
                    raise ScenarioError(name, f"clears zone {j} by {gap:.4g} < {clearance:.4g}")

    def safe_set(self) -> SafeSet:
        return SafeSet(self.zones, self.gk.margin)

    def all_offsets(self) -> tuple:
        return (FormationOffset(0.0, 0.0),) + self.offsets


@dataclass(frozen=True, eq=False)
class AgentSeries:
    agent_id: int
    offset: FormationOffset
    times: np.ndarray
    states: np.ndarray  # (N+1, 3)
    inputs: np.ndarray  # (N+1, 2), input applied from each sample (last repeats)
    min_h: np.ndarray
    deviation: np.ndarray  # |x - x_desired|_Q against the offset curve
    nominal_deviation: np.ndarray  # |x - x_nom|_Q against the nominal in force

    @property
    def total_deviation(self) -> float:
        return float(np.trapezoid(self.deviation, self.times)) if len(self.times) > 1 else 0.0

    @property
    def violation_count(self) -> int:
        return int(np.count_nonzero(self.min_h < 0))


@dataclass(frozen=True, eq=False)
class CommitRecord:
    agent_id: int
    t_k: float
    x_k: np.ndarray
    nominal: SampledTrajectory
    committed: CommittedTrajectory
    updated: bool  # False when no candidate was valid and the previous commit was kept

    @property
    def candidate(self) -> Candidate:
        return self.committed.candidate

    @property
    def t_s(self) -> float:
        return self.candidate.switch_time

    @property
    def T_B(self) -> float:
        return self.candidate.T_B

    @property
    def bound(self) -> float:
        return self.candidate.bound

    @property
    def valid_count(self) -> int:
        return self.committed.valid_count if self.updated else 0


@dataclass(frozen=True, eq=False)
class RunMetrics:
    method: Method
    agents: tuple
    step_times: np.ndarray  # wall time (s) of each controller step
    commits: tuple = ()
    leader: Optional[LeaderPath] = None

    @property
    def violation_count(self) -> int:
        return sum(a.violation_count for a in self.agents)

    @property
    def total_deviation(self) -> float:
        return float(sum(a.total_deviation for a in self.agents))

    def summary(self) -> dict:
        st = self.step_times
        out = {
            "method": self.method.value,
            "violation_count": self.violation_count,
            "total_deviation": self.total_deviation,
            "per_agent_deviation": [a.total_deviation for a in self.agents],
            "min_h": float(min(np.min(a.min_h) for a in self.agents)),
            "steps": int(len(st)),
            "step_wall_time_mean": float(np.mean(st)) if len(st) else 0.0,
            "step_wall_time_max": float(np.max(st)) if len(st) else 0.0,
            "step_wall_time_total": float(np.sum(st)),
        }
        if self.method is Method.GATEKEEPER:
            out["commits"] = len(self.commits)
            out["updated_commits"] = sum(c.updated for c in self.commits)
            out["suboptimality_bounds"] = [c.bound for c in self.commits]
        return out


def _q_norm(Q, dx) -> np.ndarray:
    dx = np.array(dx, dtype=float)
    dx[:, 2] = wrap_angle(dx[:, 2])
    return np.sqrt(np.maximum(np.einsum("ni,ij,nj->n", dx, Q, dx), 0.0))


def run(sc: Scenario, method: Method | str, leader: Optional[LeaderPath] = None) -> RunMetrics:
    """Simulate every agent from the scenario's start until ``duration``."""
    method = Method(method)
    ss = sc.safe_set()
    b, cfg, dt = sc.bounds, sc.gk, sc.dt
    lp = leader or sc.leader_path
    if lp is None:
        lp = plan_leader_path(sc.leader_start, sc.leader_goal, ss, b, sc.seed, dt=dt,
                              iterations=sc.planner_iterations)
    duration = sc.duration if sc.duration is not None else lp.tf - lp.t0
    t0 = lp.t0
    N = int(round(duration / dt))
    m = int(round(cfg.replan_period / dt))
    offsets = sc.all_offsets()
    A = len(offsets)
    Q = cfg.cost.Q

    x = [offset_reference(lp, off, [t0])[0][0].copy() for off in offsets]
    states = np.empty((A, N + 1, 3))
    inputs = np.empty((A, N + 1, 2))
    nom_dev = np.empty((A, N + 1))
    committed: list[Optional[CommittedTrajectory]] = [None] * A
    nominal: list[Optional[SampledTrajectory]] = [None] * A
    commits: list[CommitRecord] = []
    step_times: list[float] = []
    zone_ss = SafeSet(sc.zones, 0.0)
    n_k = 0

    for n in range(N + 1):
        t = t0 + n * dt
        if n % m == 0 and n < N:
            n_k = n
            for a, off in enumerate(offsets):
                nominal[a] = offset_nominal(lp, off, b, t, x[a], cfg.T_H, dt, DEFAULT_GAINS)
                if method is Method.GATEKEEPER:
                    if committed[a] is None:
                        committed[a] = initial_commit(a, t, x[a], nominal[a], lp, ss, b, cfg)
                    tic = time.perf_counter()
                    new = gatekeeper_step(a, t, x[a], nominal[a], committed[a], lp, ss, b, cfg)
                    step_times.append(time.perf_counter() - tic)
                    updated = new is not committed[a]
                    committed[a] = new
                    commits.append(CommitRecord(a, t, x[a].copy(), nominal[a], new, updated))
        for a in range(A):
            nom = nominal[a]
            i = min(n - n_k, nom.n)
            states[a, n] = x[a]
            nom_dev[a, n] = _q_norm(Q, (x[a] - nom.states[i])[None, :])[0]
            if method is Method.GATEKEEPER:
                u = committed[a].motion.input_at(t)
                inputs[a, n] = u
                if n < N:
                    x[a] = np.array(committed[a].motion.propagate(x[a], t, t + dt))
            else:
                j = min(i, nom.n - 1)
                rs, ru = nom.states[i], nom.inputs[j]
                un = _track(x[a][0], x[a][1], x[a][2], rs[0], rs[1], rs[2], ru[0], ru[1], b, DEFAULT_GAINS)
                tic = time.perf_counter()
                res = solve_cbf_qp(x[a], np.array(un), zone_ss, b, sc.cbf)
                step_times.append(time.perf_counter() - tic)
                inputs[a, n] = (res.u.v, res.u.omega)
                if n < N:
                    x[a] = np.array(step(x[a][0], x[a][1], x[a][2], res.u.v, res.u.omega, dt))

    times = t0 + np.arange(N + 1) * dt
    agents = []
    for a, off in enumerate(offsets):
        ref, _ = offset_reference(lp, off, times)
        agents.append(AgentSeries(a, off, times, states[a], inputs[a], zone_ss.min_values(states[a]),
                                  _q_norm(Q, states[a] - ref), nom_dev[a]))
    metrics = RunMetrics(method, tuple(agents), np.array(step_times), tuple(commits), lp)
    log.info("%s: violations %d, deviation %.4f, mean step %.3f ms", method.value, metrics.violation_count,
             metrics.total_deviation, 1e3 * float(np.mean(step_times)) if step_times else 0.0)
    return metrics


def full_window_cost(rec: CommitRecord, cfg: GatekeeperConfig) -> float:
    """Cost of the committed candidate over the whole window ``[t_k, t_k + T_H]``."""
    return integrate_cost(cfg.cost, rec.candidate.trajectory, rec.nominal, rec.t_k, rec.t_k + cfg.T_H, rec.t_k)


__all__ = [
    "Method", "Scenario", "ScenarioError", "AgentSeries", "CommitRecord", "RunMetrics", "run", "full_window_cost",
]
