"""Leader path, formation offsets, tracking control and the backup controller.

The leader path is the backup set: any agent sitting on it at parameter tau
can stay on it forever by replaying the leader's inputs time-shifted, and the
path itself is safe. Past the end of the planned path the leader loiters on a
circle of minimum radius, so the replay is defined for all future time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .constraints import SafeSet
from .core import (
    AgentState,
    ControlInput,
    InputBounds,
    InvalidInput,
    Motion,
    SampledTrajectory,
    step,
    wrap_angle,
)
from .dubins import DubinsWord, lengths_between, sample_path, shortest_path

log = logging.getLogger(__name__)

DEFAULT_GAINS = (4.0, 25.0, 10.0)
PLAN_RADIUS_FACTOR = 1.25  # planning radius over the minimum, leaves turn-rate headroom for tracking


class PlanningFailure(RuntimeError):
    """No safe leader path was found."""


@dataclass(frozen=True)
class FormationOffset:
    lateral: float = 0.0  # left of the leader's heading is positive
    longitudinal: float = 0.0  # ahead of the leader is positive

    def __post_init__(self):
        if not (math.isfinite(self.lateral) and math.isfinite(self.longitudinal)):
            raise InvalidInput("formation offset must be finite")


# ---------------------------------------------------------------------------
# tracking


def _track(x, y, th, xr, yr, thr, vr, wr, b: InputBounds, gains):
    kx, ky, kth = gains
    dx, dy = xr - x, yr - y
    c, s = math.cos(th), math.sin(th)
    ex = c * dx + s * dy
    ey = -s * dx + c * dy
    eth = wrap_angle(thr - th)
    v = vr + kx * ex
    w = wr + vr * (ky * ey + kth * math.sin(eth))
    return b.clamp(v, w)


def tracking_control(s: AgentState, ref_state: AgentState, ref_input: ControlInput, b: InputBounds,
                     gains=DEFAULT_GAINS) -> ControlInput:
    """Saturated kinematic pose-tracking law.

    The pose error is resolved in the agent's body frame; ``e_x`` is the
    along-track error and ``e_y`` the cross-track error.
    """
    v, w = _track(s.x, s.y, s.theta, ref_state.x, ref_state.y, ref_state.theta,
                  ref_input.v, ref_input.omega, b, gains)
    return ControlInput(v, w)


# ---------------------------------------------------------------------------
# leader path


class LeaderPath:
    """Planned leader trajectory over ``[t0, tf]`` followed by a terminal loiter circle.

    ``motion`` covers ``[t0, inf)``. Before ``t0`` the path is extended
    backwards as a straight line, which only matters for followers flying
    ahead of the leader at the start.
    """

    def __init__(self, trajectory: SampledTrajectory, bounds: InputBounds, loiter_sign: int = 1):
        self.trajectory = trajectory
        self.bounds = bounds
        self.loiter_sign = int(loiter_sign)
        m = trajectory.motion
        if m.tail is not None or abs(m.end - trajectory.t_end) > 1e-9:
            raise ValueError("leader trajectory must carry an explicit motion ending at its last sample")
        loiter = (bounds.v_min, self.loiter_sign * bounds.omega_max)
        self.motion = Motion(np.append(m.knots, np.inf), np.vstack([m.inputs, loiter]),
                             np.vstack([m.knot_states, np.full((1, 3), np.nan)]))
        # cruise speed: converts longitudinal offsets to time and extends the path backwards
        self.speed = float(np.median(trajectory.inputs[:, 0])) if trajectory.n else bounds.v_min
        seg = trajectory.inputs[:, 0] * np.diff(trajectory.times)
        self.arclength = np.concatenate([[0.0], np.cumsum(seg)])
        self._times = trajectory.times
        self._pos = np.ascontiguousarray(trajectory.states[:, :2])

    @property
    def t0(self) -> float:
        return self.trajectory.t0

    @property
    def tf(self) -> float:
        return self.trajectory.t_end

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def state_at(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.all(tau >= self.t0):
            return self.motion.state_at(tau)
        scalar = tau.ndim == 0
        tau = np.atleast_1d(tau)
        out = np.empty((len(tau), 3))
        back = tau < self.t0
        if np.any(~back):
            out[~back] = self.motion.state_at(tau[~back])
        x0 = self.trajectory.states[0]
        d = self.speed * (tau[back] - self.t0)
        out[back, 0] = x0[0] + d * math.cos(x0[2])
        out[back, 1] = x0[1] + d * math.sin(x0[2])
        out[back, 2] = x0[2]
        return out[0] if scalar else out

    def input_at(self, tau):
        scalar = np.ndim(tau) == 0
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        out = np.array(self.motion.input_at(tau))
        out[tau < self.t0] = (self.speed, 0.0)
        return out[0] if scalar else out

    def project(self, p) -> float:
        """Leader time of the sample nearest to position ``p``."""
        d = np.sum((self._pos - np.asarray(p, dtype=float)[:2]) ** 2, axis=1)
        return float(self._times[int(np.argmin(d))])

    def index_at(self, tau) -> np.ndarray:
        """Monotone map from path parameter to sample index (clamped to the planned span)."""
        i = np.searchsorted(self._times, np.asarray(tau, dtype=float) + 1e-10, side="right") - 1
        return np.clip(i, 0, len(self._times) - 1)

    def loiter_states(self, n: int = 200) -> np.ndarray:
        """One full loiter circle starting at ``tf``."""
        period = 2 * math.pi / self.bounds.omega_max
        return self.motion.state_at(self.tf + np.linspace(0.0, period, n + 1))

    def check(self, ss: SafeSet, substeps: int = 4) -> tuple[bool, float]:
        """Whether the path (finely resampled) and the loiter circle clear ``ss``; also the minimum."""
        t = np.linspace(self.t0, self.tf, substeps * max(self.trajectory.n, 1) + 1)
        h = min(float(np.min(ss.min_values(self.motion.state_at(t)))),
                float(np.min(ss.min_values(self.loiter_states()))))
        return h >= ss.margin, h

    @classmethod
    def from_trajectory(cls, trajectory: SampledTrajectory, bounds: InputBounds,
                        ss: Optional[SafeSet] = None) -> "LeaderPath":
        """Wrap an externally produced trajectory, picking a safe loiter direction if ``ss`` is given."""
        if not bounds.contains(trajectory.inputs[:, 0], trajectory.inputs[:, 1], 1e-9):
            raise InvalidInput("leader inputs are not admissible")
        if trajectory.dynamics_residual() > 1e-9:
            raise InvalidInput("leader trajectory is not dynamically feasible")
        if ss is None:
            return cls(trajectory, bounds)
        best = None
        for sign in (1, -1):
            lp = cls(trajectory, bounds, sign)
            ok, h = lp.check(ss)
            if ok:
                return lp
            best = h if best is None else max(best, h)
        raise PlanningFailure(f"leader path is not safe (min clearance {best:.4g} < margin {ss.margin})")


# ---------------------------------------------------------------------------
# offsets and nominal trajectories


def offset_reference(lp: LeaderPath, off: FormationOffset, times):
    """Reference states and inputs of the offset curve at ``times``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    tau = times + off.longitudinal / lp.speed
    L = lp.state_at(tau)
    uL = lp.input_at(tau)
    c, s = np.cos(L[:, 2]), np.sin(L[:, 2])
    states = np.stack([L[:, 0] - off.lateral * s, L[:, 1] + off.lateral * c, L[:, 2]], axis=1)
    inputs = np.stack([uL[:, 0] - off.lateral * uL[:, 1], uL[:, 1]], axis=1)
    return states, inputs


def offset_nominal(lp: LeaderPath, off: FormationOffset, b: InputBounds, t_k: float, x_k,
                   horizon: float, dt: float, gains=DEFAULT_GAINS) -> SampledTrajectory:
    """Forward-propagate the tracking law from ``(t_k, x_k)`` against the offset curve."""
    n = int(round(horizon / dt))
    times = t_k + np.arange(n + 1) * dt
    ref, uref = offset_reference(lp, off, times)
    states = np.empty((n + 1, 3))
    inputs = np.empty((n, 2))
    x, y, th = (float(c) for c in x_k)
    states[0] = (x, y, th)
    for i in range(n):
        v, w = _track(x, y, th, ref[i, 0], ref[i, 1], ref[i, 2], uref[i, 0], uref[i, 1], b, gains)
        inputs[i] = (v, w)
        x, y, th = step(x, y, th, v, w, dt)
        states[i + 1] = (x, y, th)
    return SampledTrajectory.from_arrays(t_k, dt, states, inputs)


def backup_controller(lp: LeaderPath, t: float, join_time: float, join_param: float) -> ControlInput:
    """Leader input replayed with the shift that puts ``join_time`` at ``join_param``."""
    if t < join_time - 1e-12:
        raise ValueError(f"t={t} precedes join time {join_time}")
    return ControlInput(*lp.input_at(t - join_time + join_param))


# ---------------------------------------------------------------------------
# leader planning


def _sampling_box(start, goal, ss: SafeSet, pad: float = 1.0):
    pts = [start[:2], goal[:2]]
    for z in ss.zones:
        c = getattr(z, "center", None)
        if c is not None:
            pts.append(np.asarray(c))
    pts = np.array(pts)
    return pts.min(axis=0) - pad, pts.max(axis=0) + pad


def chain_motion(words: list[DubinsWord], q0, t0: float, v: float) -> Motion:
    durations, inputs = [], []
    for w in words:
        for sign, length in zip(w.turn_signs(), w.segment_params):
            if length > 0:
                durations.append(length / v)
                inputs.append((v, sign * v / w.radius))
    if not durations:
        durations, inputs = [0.0], [(v, 0.0)]
    return Motion.from_segments(t0, q0, durations, inputs)


def track_motion(ref: Motion, x0, t0: float, dt: float, b: InputBounds, gains=DEFAULT_GAINS) -> SampledTrajectory:
    """Grid-aligned trajectory that tracks ``ref`` until its end (exactly, where ``ref`` is on-grid)."""
    T = ref.end - t0
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    times = np.minimum(t0 + np.arange(n + 1) * dt, ref.end)
    rs = ref.state_at(times)
    ru = ref.input_at(times)
    states = np.empty((n + 1, 3))
    inputs = np.empty((n, 2))
    x, y, th = (float(c) for c in x0)
    states[0] = (x, y, th)
    for i in range(n):
        v, w = _track(x, y, th, rs[i, 0], rs[i, 1], rs[i, 2], ru[i, 0], ru[i, 1], b, gains)
        inputs[i] = (v, w)
        x, y, th = step(x, y, th, v, w, dt)
        states[i + 1] = (x, y, th)
    return SampledTrajectory.from_arrays(t0, dt, states, inputs)


class _Planner:
    """Dubins RRT*: goal-biased sampling, steering, choose-parent and rewiring by path length."""

    def __init__(self, start, goal, ss: SafeSet, radius: float, rng, step_len: float, ds: float):
        self.start, self.goal, self.ss, self.r = start, goal, ss, radius
        self.rng, self.step_len, self.ds = rng, step_len, ds
        self.lo, self.hi = _sampling_box(start, goal, ss)
        self.nodes = [start]
        self.parent = [-1]
        self.cost = [0.0]
        self.word: list[Optional[DubinsWord]] = [None]
        self.children: list[list[int]] = [[]]
        self.goal_links: list[tuple[int, DubinsWord]] = []

    def safe(self, q0, word: DubinsWord) -> bool:
        pts = sample_path(word, q0, self.ds)
        return bool(np.all(self.ss.min_values(pts) >= self.ss.margin))

    def _propagate_cost(self, j: int, delta: float):
        stack = [j]
        while stack:
            k = stack.pop()
            self.cost[k] -= delta
            stack.extend(self.children[k])

    def _set_parent(self, j: int, p: int, word: DubinsWord):
        old = self.parent[j]
        if old >= 0:
            self.children[old].remove(j)
        self.parent[j] = p
        self.word[j] = word
        self.children[p].append(j)

    def extend(self, q):
        P = np.array(self.nodes)
        n = len(P)
        d2 = np.sum((P[:, :2] - q[:2]) ** 2, axis=1)
        near_i = int(np.argmin(d2))
        w = shortest_path(P[near_i], q, self.r)
        if w.total_length > self.step_len:
            # steer: stop partway along the path from the nearest node
            q = _point_along(w, P[near_i], self.step_len)
        if self.ss.zones and self.ss.min_values(q)[0] < self.ss.margin:
            return
        rad = max(2.5 * self.step_len * math.sqrt(math.log(n + 1) / (n + 1)), 3 * self.r)
        near = np.nonzero(np.sum((P[:, :2] - q[:2]) ** 2, axis=1) <= rad * rad)[0]
        if near_i not in near:
            near = np.append(near, near_i)
        L = lengths_between(P[near], q[None, :], self.r)
        total = np.array(self.cost)[near] + L
        parent = -1
        for k in np.argsort(total, kind="stable"):
            i = int(near[k])
            word = shortest_path(P[i], q, self.r)
            if self.safe(P[i], word):
                parent, pword, pcost = i, word, float(total[k])
                break
        if parent < 0:
            return
        j = len(self.nodes)
        self.nodes.append(q)
        self.parent.append(-1)
        self.cost.append(pcost)
        self.word.append(None)
        self.children.append([])
        self._set_parent(j, parent, pword)
        # rewire
        Lout = lengths_between(q[None, :], P[near], self.r)
        for k in np.argsort(Lout, kind="stable"):
            i = int(near[k])
            if i == parent:
                continue
            newc = pcost + float(Lout[k])
            if newc < self.cost[i] - 1e-9:
                word = shortest_path(q, P[i], self.r)
                if self.safe(q, word):
                    self._set_parent(i, j, word)
                    self._propagate_cost(i, self.cost[i] - newc)
        # goal connection
        gw = shortest_path(q, self.goal, self.r)
        best = self.best_goal_cost()
        if pcost + gw.total_length < best and self.safe(q, gw):
            self.goal_links.append((j, gw))

    def best_goal_cost(self) -> float:
        return min((self.cost[i] + w.total_length for i, w in self.goal_links), default=math.inf)

    def best_chain(self) -> Optional[list[DubinsWord]]:
        if not self.goal_links:
            return None
        i, gw = min(self.goal_links, key=lambda lw: self.cost[lw[0]] + lw[1].total_length)
        words = [gw]
        while self.parent[i] >= 0:
            words.append(self.word[i])
            i = self.parent[i]
        return words[::-1]


def _point_along(word: DubinsWord, q0, s: float) -> np.ndarray:
    m = chain_motion([word], q0, 0.0, 1.0)
    return m.state_at(min(s, m.end))


def plan_leader_path(start: AgentState, goal: AgentState, ss: SafeSet, b: InputBounds, seed: int, *,
                     dt: float = 0.005, t0: float = 0.0, iterations: int = 400, extra_rounds: int = 2,
                     goal_bias: float = 0.1,
                     step_len: float = 1.5, plan_margin: float = 0.03, speed: Optional[float] = None,
                     radius: Optional[float] = None, gains=DEFAULT_GAINS) -> LeaderPath:
    """Dubins RRT* from ``start`` to ``goal``, deterministic in ``seed``.

    The leader cruises at ``speed`` (default: middle of the speed range, so
    followers can both gain and lose ground on it). The steering radius
    defaults to a little above the tightest one at that speed.

    If no path reaches the goal within ``iterations``, the same tree keeps
    growing for up to ``extra_rounds`` further budgets before giving up.

    Planning uses a slightly inflated margin; the resulting Dubins chain is
    converted into a grid-aligned trajectory by the tracking law and then
    re-checked against the true margin at sub-sample resolution.
    """
    q0, qg = start.as_array(), goal.as_array()
    v = speed if speed is not None else 0.5 * (b.v_min + b.v_max)
    if not b.v_min <= v <= b.v_max:
        raise ValueError(f"leader speed {v} outside [{b.v_min}, {b.v_max}]")
    r = radius if radius is not None else PLAN_RADIUS_FACTOR * v / b.omega_max
    if r < v / b.omega_max - 1e-12:
        raise ValueError(f"planning radius {r} is tighter than the bounds allow")
    pss = ss.with_margin(ss.margin + plan_margin)
    if pss.zones and (pss.min_values(q0)[0] < pss.margin or pss.min_values(qg)[0] < pss.margin):
        raise PlanningFailure("start or goal is too close to a zone")
    rng = np.random.default_rng(seed)
    pl = _Planner(q0, qg, pss, r, rng, step_len, ds=0.01)
    direct = shortest_path(q0, qg, r)
    if pl.safe(q0, direct):
        chain = [direct]
    else:
        span = pl.hi - pl.lo
        chain = None
        for round_ in range(1 + max(extra_rounds, 0)):
            for _ in range(iterations):
                if rng.random() < goal_bias:
                    q = qg.copy()
                else:
                    u = rng.random(3)
                    q = np.array([pl.lo[0] + u[0] * span[0], pl.lo[1] + u[1] * span[1], (u[2] * 2 - 1) * math.pi])
                pl.extend(q)
            chain = pl.best_chain()
            if chain is not None:
                break
            log.info("no path after %d iterations, extending the tree", (round_ + 1) * iterations)
        if chain is None:
            total = iterations * (1 + max(extra_rounds, 0))
            raise PlanningFailure(f"no safe path after {total} iterations ({len(pl.nodes)} nodes)")
    log.debug("leader chain: %d words, length %.4f", len(chain), sum(w.total_length for w in chain))
    ref = chain_motion(chain, q0, t0, v)
    traj = track_motion(ref, q0, t0, dt, b, gains)
    lp = LeaderPath.from_trajectory(traj, b, ss)
    end_err = float(np.hypot(*(traj.states[-1, :2] - qg[:2])))
    log.info("leader path: length %.3f, tf %.3f, goal miss %.2e", lp.length, lp.tf, end_err)
    return lp


__all__ = [
    "DEFAULT_GAINS", "PlanningFailure", "FormationOffset", "LeaderPath", "tracking_control", "offset_reference",
    "offset_nominal", "backup_controller", "plan_leader_path", "chain_motion", "track_motion",
]
