"""Foundational types, exact Dubins flow, and running-cost quadrature.

Every trajectory in the package is backed by a :class:`Motion`: an initial
state plus a piecewise-constant input schedule whose breakpoints need not lie
on any sampling grid. Because the unicycle flow has a closed form, a Motion can
be evaluated at arbitrary times without integration error. A
:class:`SampledTrajectory` is a uniform-grid view of a Motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

import numpy as np

TWO_PI = 2.0 * math.pi
STRAIGHT_EPS = 1e-9  # |omega| below this is flown as a straight line
_SNAP = 1e-10  # times this close to a breakpoint are treated as on it


class InvalidInput(ValueError):
    """Raised for non-finite or otherwise unusable numeric input."""


class DomainError(ValueError):
    """Raised when an interval falls outside a trajectory's domain."""


def wrap_angle(a):
    """Wrap an angle (scalar or array) to (-pi, pi].

    Values already in range are returned unchanged, so wrapping is idempotent.
    """
    if np.ndim(a) == 0:
        a = float(a)
        if -math.pi < a <= math.pi:
            return a
        return math.pi - (math.pi - a) % TWO_PI
    a = np.asarray(a, dtype=float)
    inside = (a > -math.pi) & (a <= math.pi)
    return np.where(inside, a, math.pi - np.mod(math.pi - a, TWO_PI))


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        vals = (self.x, self.y, self.theta)
        if not all(math.isfinite(float(v)) for v in vals):
            raise InvalidInput(f"non-finite state {vals}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> "AgentState":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class ControlInput:
    v: float
    omega: float

    def __post_init__(self):
        if not (math.isfinite(float(self.v)) and math.isfinite(float(self.omega))):
            raise InvalidInput(f"non-finite input ({self.v}, {self.omega})")
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "omega", float(self.omega))

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])

    def admissible(self, bounds: "InputBounds", tol: float = 1e-12) -> bool:
        return bounds.contains(self.v, self.omega, tol)


@dataclass(frozen=True)
class InputBounds:
    v_min: float = 0.8
    v_max: float = 1.0
    omega_max: float = 10.0

    def __post_init__(self):
        if not (0 < self.v_min <= self.v_max):
            raise ValueError(f"need 0 < v_min <= v_max, got {self.v_min}, {self.v_max}")
        if not self.omega_max > 0:
            raise ValueError(f"need omega_max > 0, got {self.omega_max}")

    def clamp(self, v: float, omega: float) -> tuple[float, float]:
        v = min(max(v, self.v_min), self.v_max)
        omega = min(max(omega, -self.omega_max), self.omega_max)
        return v, omega

    def contains(self, v, omega, tol: float = 1e-12):
        v = np.asarray(v)
        omega = np.asarray(omega)
        ok = (v >= self.v_min - tol) & (v <= self.v_max + tol) & (np.abs(omega) <= self.omega_max + tol)
        return bool(np.all(ok))


class CostVariant(str, Enum):
    QUADRATIC = "QUADRATIC"
    DISCOUNTED = "DISCOUNTED"
    INDICATOR = "INDICATOR"


def _default_q():
    return np.diag([1.0, 1.0, 0.0])


def _default_r():
    return np.zeros((2, 2))


@dataclass(frozen=True)
class CostConfig:
    """Running-cost weights.

    Q = diag(1, 1, 0) is only positive *semi*definite; that is accepted. The
    nominal-prefix cost is still exactly zero because prefix samples are copied
    from the nominal verbatim.
    """

    Q: np.ndarray = field(default_factory=_default_q)
    R: np.ndarray = field(default_factory=_default_r)
    gamma: float = 0.0
    variant: CostVariant = CostVariant.QUADRATIC

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        R = np.array(self.R, dtype=float)
        if Q.shape != (3, 3) or R.shape != (2, 2):
            raise ValueError("Q must be 3x3 and R must be 2x2")
        for name, M in (("Q", Q), ("R", R)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        Q.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "variant", CostVariant(self.variant))


# ---------------------------------------------------------------------------
# exact flow


def _sinc(h):
    return 1.0 if abs(h) < 1e-9 else math.sin(h) / h


def step(x: float, y: float, th: float, v: float, w: float, tau: float) -> tuple[float, float, float]:
    """Closed-form unicycle flow for scalars.

    Uses the half-angle form so the result stays accurate as omega -> 0.
    """
    if tau == 0.0:
        return x, y, th
    h = 0.5 * w * tau
    if abs(w) < STRAIGHT_EPS:
        s = v * tau
        return x + s * math.cos(th), y + s * math.sin(th), th
    s = v * tau * _sinc(h)
    mid = th + h
    return x + s * math.cos(mid), y + s * math.sin(mid), wrap_angle(th + w * tau)


def flow(states, v, w, tau) -> np.ndarray:
    """Vectorized closed-form flow; broadcasts over leading dimensions."""
    states = np.asarray(states, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    tau = np.asarray(tau, dtype=float)
    th = states[..., 2]
    straight = np.abs(w) < STRAIGHT_EPS
    w_eff = np.where(straight, 0.0, w)
    h = 0.5 * w_eff * tau
    small = np.abs(h) < 1e-9
    sinc = np.where(small, 1.0, np.sin(h) / np.where(small, 1.0, h))
    s = v * tau * sinc
    mid = th + h
    out = np.empty(np.broadcast(states[..., 0], v, w, tau).shape + (3,))
    out[..., 0] = states[..., 0] + s * np.cos(mid)
    out[..., 1] = states[..., 1] + s * np.sin(mid)
    out[..., 2] = wrap_angle(th + w_eff * tau)
    return out


def propagate_exact(s: AgentState, u: ControlInput, dt: float) -> AgentState:
    """Advance ``s`` under constant input ``u`` for ``dt`` time units."""
    if not math.isfinite(dt) or dt < 0:
        raise InvalidInput(f"dt must be finite and >= 0, got {dt}")
    return AgentState(*step(s.x, s.y, s.theta, u.v, u.omega, dt))


# ---------------------------------------------------------------------------
# motions


class Motion:
    """Exact trajectory: initial state plus a piecewise-constant input schedule.

    Segment ``j`` holds ``inputs[j]`` on ``[knots[j], knots[j+1])``. The last
    knot may be ``inf``. For ``t >= knots[-1]`` the motion continues as
    ``tail.state_at(t + tail_offset)`` when a tail is attached; this is how a
    backup trajectory hands over to a time-shifted replay of the leader.
    """

    __slots__ = ("knots", "inputs", "knot_states", "tail", "tail_offset")

    def __init__(self, knots, inputs, knot_states, tail: Optional["Motion"] = None, tail_offset: float = 0.0):
        self.knots = np.asarray(knots, dtype=float)
        self.inputs = np.asarray(inputs, dtype=float).reshape(-1, 2)
        self.knot_states = np.asarray(knot_states, dtype=float).reshape(-1, 3)
        if len(self.knots) != len(self.inputs) + 1 or len(self.knot_states) != len(self.knots):
            raise ValueError("knots/inputs/knot_states length mismatch")
        self.tail = tail
        self.tail_offset = float(tail_offset)
        for a in (self.knots, self.inputs, self.knot_states):
            a.setflags(write=False)

    @classmethod
    def from_segments(cls, t0: float, x0, durations, inputs, tail=None, tail_offset=0.0) -> "Motion":
        durations = np.asarray(durations, dtype=float)
        inputs = np.asarray(inputs, dtype=float).reshape(-1, 2)
        if np.any(durations < 0):
            raise ValueError("negative segment duration")
        knots = np.empty(len(durations) + 1)
        knots[0] = t0
        knots[1:] = t0 + np.cumsum(durations)
        ks = np.empty((len(knots), 3))
        ks[0] = x0
        x, y, th = (float(c) for c in x0)
        for j, d in enumerate(durations):
            if math.isinf(d):
                ks[j + 1:] = np.nan
                break
            x, y, th = step(x, y, th, inputs[j, 0], inputs[j, 1], float(d))
            ks[j + 1] = (x, y, th)
        return cls(knots, inputs, ks, tail, tail_offset)

    @property
    def t0(self) -> float:
        return float(self.knots[0])

    @property
    def end(self) -> float:
        """End of the explicit schedule (``inf`` if it never ends)."""
        return float(self.knots[-1])

    @property
    def horizon(self) -> float:
        """Latest time at which the motion is defined."""
        if self.tail is not None:
            return self.tail.horizon - self.tail_offset
        return self.end

    def _locate(self, t):
        j = np.searchsorted(self.knots, t + _SNAP, side="right") - 1
        return np.clip(j, 0, len(self.inputs) - 1)

    def state_at(self, t):
        """State(s) at time(s) ``t``; returns shape ``(3,)`` or ``(N, 3)``."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < self.t0 - _SNAP):
            raise DomainError(f"time {t.min()} before motion start {self.t0}")
        out = np.empty((len(t), 3))
        own = t < self.end - _SNAP
        if self.tail is None:
            at_end = ~own
            if np.any(t[at_end] > self.end + _SNAP):
                raise DomainError(f"time {t.max()} after motion end {self.end}")
            if np.any(at_end):
                out[at_end] = self.knot_states[-1]
        else:
            if np.any(~own):
                out[~own] = self.tail.state_at(t[~own] + self.tail_offset)
        if np.any(own):
            tt = t[own]
            j = self._locate(tt)
            tau = tt - self.knots[j]
            tau = np.where(np.abs(tau) < _SNAP, 0.0, tau)
            res = flow(self.knot_states[j], self.inputs[j, 0], self.inputs[j, 1], tau)
            z = tau == 0.0
            res[z] = self.knot_states[j[z]]
            out[own] = res
        return out[0] if scalar else out

    def input_at(self, t):
        """Input(s) in force at ``t`` (right-continuous)."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((len(t), 2))
        own = t < self.end - _SNAP
        if np.any(own):
            out[own] = self.inputs[self._locate(t[own])]
        rest = ~own
        if np.any(rest):
            if self.tail is not None:
                out[rest] = self.tail.input_at(t[rest] + self.tail_offset)
            else:
                out[rest] = self.inputs[-1]
        return out[0] if scalar else out

    def segments(self, a: float, b: float) -> Iterator[tuple[float, float, float]]:
        """Yield ``(duration, v, omega)`` pieces covering ``[a, b]`` in order."""
        t = a
        while t < b - _SNAP:
            if t >= self.end - _SNAP:
                if self.tail is None:
                    raise DomainError(f"interval [{a}, {b}] exceeds motion end {self.end}")
                for piece in self.tail.segments(t + self.tail_offset, b + self.tail_offset):
                    yield piece
                return
            j = int(self._locate(t))
            nxt = min(float(self.knots[j + 1]), b)
            if nxt - t > 0:
                yield nxt - t, float(self.inputs[j, 0]), float(self.inputs[j, 1])
            t = nxt

    def propagate(self, x, a: float, b: float) -> tuple[float, float, float]:
        """Propagate an arbitrary state ``x`` through this motion's inputs over ``[a, b]``."""
        px, py, pth = (float(c) for c in x)
        for d, v, w in self.segments(a, b):
            px, py, pth = step(px, py, pth, v, w, d)
        return px, py, pth


def grid_times(t0: float, dt: float, n: int) -> np.ndarray:
    """Canonical sample times ``t0 + i*dt`` for ``i = 0..n``."""
    return t0 + np.arange(n + 1) * dt


@dataclass(frozen=True, eq=False)
class SampledTrajectory:
    """Uniform-grid samples of a :class:`Motion`.

    ``inputs[i]`` is the input in force at ``t_i``. When the underlying motion
    switches inputs strictly inside an interval, the motion (not ``inputs``)
    is authoritative for propagation.
    """

    t0: float
    dt: float
    states: np.ndarray
    inputs: np.ndarray
    motion: Motion
    t_last: Optional[float] = None  # time of the final sample when the last interval is short

    def __post_init__(self):
        if len(self.states) != len(self.inputs) + 1:
            raise ValueError("need len(states) == len(inputs) + 1")
        self.states.setflags(write=False)
        self.inputs.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.inputs)

    @property
    def t_end(self) -> float:
        return self.t_last if self.t_last is not None else self.t0 + self.n * self.dt

    @property
    def times(self) -> np.ndarray:
        t = grid_times(self.t0, self.dt, self.n)
        if self.t_last is not None:
            t[-1] = self.t_last
        return t

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Sample index for grid time ``t``; raises if off-grid or outside."""
        k = (t - self.t0) / self.dt
        i = int(round(k))
        if abs(k - i) > tol * max(1.0, abs(k)) or i < 0 or i > self.n:
            raise DomainError(f"time {t} is not a sample of [{self.t0}, {self.t_end}] at dt={self.dt}")
        return i

    def state(self, i: int) -> AgentState:
        return AgentState.from_array(self.states[i])

    def input(self, i: int) -> ControlInput:
        return ControlInput(*self.inputs[i])

    @classmethod
    def sample(cls, motion: Motion, t0: float, dt: float, n: int) -> "SampledTrajectory":
        t = grid_times(t0, dt, n)
        states = motion.state_at(t)
        inputs = motion.input_at(t[:-1]) if n > 0 else np.zeros((0, 2))
        return cls(float(t0), float(dt), states, inputs, motion)

    @classmethod
    def from_arrays(cls, t0: float, dt: float, states, inputs) -> "SampledTrajectory":
        """Wrap states already produced by sequential :func:`step` calls (not re-checked)."""
        states = np.array(states, dtype=float)
        inputs = np.array(inputs, dtype=float).reshape(-1, 2)
        motion = Motion(grid_times(t0, dt, len(inputs)), inputs, states)
        return cls(float(t0), float(dt), states.copy(), inputs.copy(), motion)

    @classmethod
    def from_inputs(cls, x0, t0: float, dt: float, inputs) -> "SampledTrajectory":
        """Build a grid-aligned trajectory by sequential exact propagation."""
        inputs = np.array(inputs, dtype=float).reshape(-1, 2)
        n = len(inputs)
        states = np.empty((n + 1, 3))
        x, y, th = (float(c) for c in x0)
        th = wrap_angle(th)
        states[0] = (x, y, th)
        for i in range(n):
            x, y, th = step(x, y, th, inputs[i, 0], inputs[i, 1], dt)
            states[i + 1] = (x, y, th)
        return cls.from_arrays(t0, dt, states, inputs)

    def dynamics_residual(self) -> float:
        """Max position/heading mismatch between consecutive samples under the motion."""
        worst = 0.0
        t = self.times
        for i in range(self.n):
            nx = self.motion.propagate(self.states[i], t[i], t[i + 1])
            d = np.array(nx) - self.states[i + 1]
            d[2] = wrap_angle(d[2])
            worst = max(worst, float(np.max(np.abs(d))))
        return worst


def resample(traj: SampledTrajectory, new_dt: float) -> SampledTrajectory:
    """Re-sample along the recorded motion at spacing ``new_dt``.

    The sample count is the largest that stays inside the original span.
    """
    if not new_dt > 0:
        raise ValueError(f"new_dt must be > 0, got {new_dt}")
    span = traj.n * traj.dt
    n = int(math.floor(span / new_dt + 1e-9))
    if new_dt == traj.dt:
        return SampledTrajectory(traj.t0, traj.dt, traj.states.copy(), traj.inputs.copy(), traj.motion)
    return SampledTrajectory.sample(traj.motion, traj.t0, new_dt, n)


# ---------------------------------------------------------------------------
# costs


def _quadratic(cfg: CostConfig, dx: np.ndarray, du: np.ndarray) -> np.ndarray:
    dx = np.array(dx, dtype=float, copy=True)
    dx[..., 2] = wrap_angle(dx[..., 2])
    return np.einsum("...i,ij,...j->...", dx, cfg.Q, dx) + np.einsum("...i,ij,...j->...", du, cfg.R, du)


def running_cost_array(cfg: CostConfig, t, x1, u1, x2, u2, t_k: float) -> np.ndarray:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    dx = x1 - x2
    du = u1 - u2
    if cfg.variant is CostVariant.INDICATOR:
        dxw = dx.copy()
        dxw[..., 2] = wrap_angle(dxw[..., 2])
        same = np.all(dxw == 0, axis=-1) & np.all(du == 0, axis=-1)
        return np.where(same, 0.0, 1.0)
    c = _quadratic(cfg, dx, du)
    if cfg.variant is CostVariant.DISCOUNTED:
        c = c * np.exp(-cfg.gamma * (np.asarray(t, dtype=float) - t_k))
    return c


def running_cost(cfg: CostConfig, t: float, x1: AgentState, u1: ControlInput,
                 x2: AgentState, u2: ControlInput, t_k: float) -> float:
    """Deviation cost of ``(x1, u1)`` about ``(x2, u2)`` at time ``t``."""
    return float(running_cost_array(cfg, t, x1.as_array(), u1.as_array(), x2.as_array(), u2.as_array(), t_k))


def integrate_cost(cfg: CostConfig, traj: SampledTrajectory, ref: SampledTrajectory,
                   a: float, b: float, t_k: float) -> float:
    """Trapezoidal integral of the running cost of ``traj`` about ``ref`` over ``[a, b]``.

    Inputs are held over each sample interval, so both trapezoid nodes of
    interval ``i`` use ``inputs[i]``. ``a`` and ``b`` must be sample times of
    both trajectories.
    """
    if abs(traj.dt - ref.dt) > 1e-15 * max(1.0, traj.dt):
        raise DomainError("trajectories use different sample spacing")
    if b < a:
        raise DomainError(f"empty interval [{a}, {b}] reversed")
    ia, ib = traj.index_of(a), traj.index_of(b)
    ra, rb = ref.index_of(a), ref.index_of(b)
    if ib == ia:
        return 0.0
    t = traj.times[ia:ib + 1]
    xs = traj.states[ia:ib + 1]
    xr = ref.states[ra:rb + 1]
    us = traj.inputs[ia:ib]
    ur = ref.inputs[ra:rb]
    left = running_cost_array(cfg, t[:-1], xs[:-1], us, xr[:-1], ur, t_k)
    right = running_cost_array(cfg, t[1:], xs[1:], us, xr[1:], ur, t_k)
    return float(np.sum(0.5 * traj.dt * (left + right)))
