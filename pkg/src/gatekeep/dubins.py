"""Shortest Dubins paths between oriented configurations.

Closed-form solutions for the six words (LSL, RSR, LSR, RSL, RLR, LRL) on the
normalized problem (start at the origin, unit radius), vectorized over many
goal configurations at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    TWO_PI,
    AgentState,
    InputBounds,
    Motion,
    SampledTrajectory,
    flow,
)

WORDS = ("LSL", "RSR", "LSR", "RSL", "RLR", "LRL")
_SIGNS = np.array([[1, 0, 1], [-1, 0, -1], [1, 0, -1], [-1, 0, 1], [-1, 1, -1], [1, -1, 1]], dtype=float)
_TIE = 1e-12


class InadmissibleTurn(ValueError):
    """Requested turn radius is tighter than the input bounds allow."""


@dataclass(frozen=True)
class DubinsWord:
    word: str
    segment_params: tuple[float, float, float]  # segment lengths, LU
    radius: float

    @property
    def total_length(self) -> float:
        return float(sum(self.segment_params))

    def turn_signs(self) -> tuple[int, int, int]:
        return tuple({"L": 1, "S": 0, "R": -1}[c] for c in self.word)


def min_turn_radius(b: InputBounds) -> float:
    """Tightest admissible radius: slowest speed at the largest turn rate."""
    return b.v_min / b.omega_max


def _mod2pi(a):
    m = np.mod(a, TWO_PI)
    # tiny negative angles would otherwise become full loops
    return np.where(TWO_PI - m < 1e-10, 0.0, m)


def _normalize(q0, q1, radius):
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    q1 = np.atleast_2d(np.asarray(q1, dtype=float))
    dx = q1[:, 0] - q0[:, 0]
    dy = q1[:, 1] - q0[:, 1]
    d = np.hypot(dx, dy) / radius
    th = np.where(d > 1e-14, np.arctan2(dy, dx), 0.0)
    alpha = _mod2pi(q0[:, 2] - th)
    beta = _mod2pi(q1[:, 2] - th)
    return alpha, beta, d


def _word_params(alpha, beta, d):
    """Normalized (t, p, q) for all six words; NaN where a word does not exist.

    Returns an array of shape (6, N, 3).
    """
    sa, sb = np.sin(alpha), np.sin(beta)
    ca, cb = np.cos(alpha), np.cos(beta)
    cab = np.cos(alpha - beta)
    n = len(d)
    out = np.full((6, n, 3), np.nan)

    with np.errstate(invalid="ignore"):
        # LSL
        psq = 2 + d * d - 2 * cab + 2 * d * (sa - sb)
        tmp = np.arctan2(cb - ca, d + sa - sb)
        coincide = psq < 1e-18
        ok = psq >= 0
        t = np.where(coincide, _mod2pi(beta - alpha), _mod2pi(tmp - alpha))
        p = np.where(coincide, 0.0, np.sqrt(np.maximum(psq, 0)))
        q = np.where(coincide, 0.0, _mod2pi(beta - tmp))
        out[0] = np.where(ok[:, None], np.stack([t, p, q], -1), np.nan)

        # RSR
        psq = 2 + d * d - 2 * cab + 2 * d * (sb - sa)
        tmp = np.arctan2(ca - cb, d - sa + sb)
        coincide = psq < 1e-18
        ok = psq >= 0
        t = np.where(coincide, _mod2pi(alpha - beta), _mod2pi(alpha - tmp))
        p = np.where(coincide, 0.0, np.sqrt(np.maximum(psq, 0)))
        q = np.where(coincide, 0.0, _mod2pi(tmp - beta))
        out[1] = np.where(ok[:, None], np.stack([t, p, q], -1), np.nan)

        # LSR
        psq = -2 + d * d + 2 * cab + 2 * d * (sa + sb)
        ok = psq >= 0
        p = np.sqrt(np.maximum(psq, 0))
        tmp = np.arctan2(-ca - cb, d + sa + sb) - np.arctan2(-2.0, p)
        t = _mod2pi(tmp - alpha)
        q = _mod2pi(tmp - beta)
        out[2] = np.where(ok[:, None], np.stack([t, p, q], -1), np.nan)

        # RSL
        psq = -2 + d * d + 2 * cab - 2 * d * (sa + sb)
        ok = psq >= 0
        p = np.sqrt(np.maximum(psq, 0))
        tmp = np.arctan2(ca + cb, d - sa - sb) - np.arctan2(2.0, p)
        t = _mod2pi(alpha - tmp)
        q = _mod2pi(beta - tmp)
        out[3] = np.where(ok[:, None], np.stack([t, p, q], -1), np.nan)

        # RLR
        c = (6.0 - d * d + 2 * cab + 2 * d * (sa - sb)) / 8.0
        ok = np.abs(c) <= 1.0
        phi = np.arctan2(ca - cb, d - sa + sb)
        p = _mod2pi(TWO_PI - np.arccos(np.clip(c, -1, 1)))
        t = _mod2pi(alpha - phi + _mod2pi(p / 2.0))
        q = _mod2pi(alpha - beta - t + _mod2pi(p))
        out[4] = np.where(ok[:, None], np.stack([t, p, q], -1), np.nan)

        # LRL
        c = (6.0 - d * d + 2 * cab + 2 * d * (sb - sa)) / 8.0
        ok = np.abs(c) <= 1.0
        phi = np.arctan2(ca - cb, d + sa - sb)
        p = _mod2pi(TWO_PI - np.arccos(np.clip(c, -1, 1)))
        t = _mod2pi(-alpha - phi + p / 2.0)
        q = _mod2pi(_mod2pi(beta) - alpha - t + _mod2pi(p))
        out[5] = np.where(ok[:, None], np.stack([t, p, q], -1), np.nan)
    return out


def _pick(params):
    """Index of the shortest word per goal with ties going to the earlier word."""
    lengths = np.nansum(params, axis=-1)
    lengths = np.where(np.isnan(params).any(axis=-1), np.inf, lengths)
    best = np.argmin(lengths, axis=0)
    best_len = lengths[best, np.arange(lengths.shape[1])]
    # argmin already prefers the lowest index among exact ties; widen to near-ties
    for w in range(6):
        near = lengths[w] <= best_len + _TIE * np.maximum(1.0, best_len)
        earlier = near & (w < best)
        best = np.where(earlier, w, best)
    return best, lengths


def word_lengths(q0, q1, radius: float) -> dict[str, float]:
    """Length (LU) of every word's closed-form solution; ``inf`` if it does not exist."""
    alpha, beta, d = _normalize(q0, q1, radius)
    params = _word_params(alpha, beta, d)[:, 0, :]
    out = {}
    for w, name in enumerate(WORDS):
        out[name] = float(np.inf if np.isnan(params[w]).any() else radius * params[w].sum())
    return out


def shortest_lengths(q0, targets, radius: float) -> np.ndarray:
    """Shortest-path lengths from one start to many targets ``(N, 3)``."""
    return PathSet(q0, targets, radius).lengths


def lengths_between(sources, targets, radius: float) -> np.ndarray:
    """Pairwise shortest lengths for broadcastable ``(N, 3)`` sources and targets."""
    sources, targets = np.broadcast_arrays(np.atleast_2d(sources), np.atleast_2d(targets))
    alpha, beta, d = _normalize(sources, targets, radius)
    best, lengths = _pick(_word_params(alpha, beta, d))
    return radius * lengths[best, np.arange(len(d))]


def shortest_path(q0: AgentState, q1: AgentState, radius: float) -> DubinsWord:
    """Minimum-length Dubins word from ``q0`` to ``q1`` at turning radius ``radius``."""
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    a0 = q0.as_array() if isinstance(q0, AgentState) else np.asarray(q0, dtype=float)
    a1 = q1.as_array() if isinstance(q1, AgentState) else np.asarray(q1, dtype=float)
    return shortest_paths(a0, a1[None, :], radius)[0]


class PathSet:
    """Shortest paths from one start to many targets, solved together."""

    def __init__(self, q0, targets, radius: float):
        alpha, beta, d = _normalize(q0, targets, radius)
        self._params = _word_params(alpha, beta, d)
        self._best, lengths = _pick(self._params)
        self.radius = float(radius)
        self.lengths = radius * lengths[self._best, np.arange(len(d))]

    def __len__(self):
        return len(self.lengths)

    def grid_samples(self, q0, idx, v: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """States at ``k * dt`` strictly inside each selected path (flown at speed ``v``).

        Returns the stacked states and, per state, its position in ``idx``.
        """
        idx = np.asarray(idx, dtype=int)
        w = self._best[idx]
        dur = self.radius * self._params[w, idx] / v  # (M, 3)
        omega = _SIGNS[w] * (v / self.radius)
        n = np.maximum(np.ceil(dur.sum(axis=1) / dt - 1e-9).astype(int) - 1, 0)
        owner = np.repeat(np.arange(len(idx)), n)
        if len(owner) == 0:
            return np.empty((0, 3)), owner
        first = np.repeat(np.cumsum(n) - n, n)
        t = (np.arange(len(owner)) - first + 1) * dt
        q = np.empty((len(idx), 3, 3))
        q[:, 0] = np.asarray(q0, dtype=float)
        q[:, 1] = flow(q[:, 0], v, omega[:, 0], dur[:, 0])
        q[:, 2] = flow(q[:, 1], v, omega[:, 1], dur[:, 1])
        cum = np.cumsum(dur, axis=1)
        j = (t >= cum[owner, 0]).astype(int) + (t >= cum[owner, 1])
        t_start = np.where(j == 0, 0.0, cum[owner, np.maximum(j - 1, 0)])
        return flow(q[owner, j], v, omega[owner, j], t - t_start), owner

    def word(self, i: int) -> DubinsWord:
        w = int(self._best[i])
        seg = tuple(float(self.radius * s) for s in self._params[w, i])
        return DubinsWord(WORDS[w], seg, self.radius)


def shortest_paths(q0, targets, radius: float) -> list[DubinsWord]:
    ps = PathSet(q0, targets, radius)
    return [ps.word(i) for i in range(len(ps))]


def _segments(word: DubinsWord, v: float):
    durations, inputs = [], []
    for sign, length in zip(word.turn_signs(), word.segment_params):
        if length <= 0.0:
            continue
        durations.append(length / v)
        inputs.append((v, sign * v / word.radius))
    return durations, inputs


def to_motion(word: DubinsWord, q0, t_start: float, v: float, tail=None, tail_offset=0.0) -> Motion:
    """The path flown at constant speed ``v`` as an exact motion starting at ``t_start``."""
    durations, inputs = _segments(word, v)
    if not durations:
        durations, inputs = [0.0], [(v, 0.0)]
    x0 = q0.as_array() if isinstance(q0, AgentState) else np.asarray(q0, dtype=float)
    return Motion.from_segments(t_start, x0, durations, inputs, tail, tail_offset)


def to_trajectory(word: DubinsWord, q0: AgentState, t_start: float, v: float, dt: float,
                  bounds: InputBounds | None = None) -> SampledTrajectory:
    """Sample the path at spacing ``dt``; the last sample is the exact endpoint.

    The final partial interval (if any) is shortened so that the trajectory
    ends exactly at ``t_start + total_length / v``.
    """
    bounds = bounds or InputBounds()
    if not (bounds.v_min - 1e-12 <= v <= bounds.v_max + 1e-12):
        raise InadmissibleTurn(f"speed {v} outside [{bounds.v_min}, {bounds.v_max}]")
    if word.radius < v / bounds.omega_max - 1e-12:
        raise InadmissibleTurn(
            f"radius {word.radius} needs turn rate {v / word.radius} > omega_max {bounds.omega_max}")
    m = to_motion(word, q0, t_start, v)
    duration = word.total_length / v
    n = int(math.ceil(duration / dt - 1e-9))
    if n == 0:
        return SampledTrajectory.sample(m, t_start, dt, 0)
    traj = SampledTrajectory.sample(m, t_start, dt, n - 1)
    states = np.vstack([traj.states, m.state_at(m.end)[None, :]])
    inputs = np.vstack([traj.inputs, m.input_at(t_start + (n - 1) * dt)[None, :]])
    return SampledTrajectory(traj.t0, dt, states, inputs, m, t_last=t_start + duration)


def sample_path(word: DubinsWord, q0, ds: float) -> np.ndarray:
    """Configurations along the path every ``ds`` of arc length, endpoint included."""
    m = to_motion(word, q0, 0.0, 1.0)
    L = word.total_length
    n = max(1, int(math.ceil(L / ds)))
    s = np.linspace(0.0, L, n + 1)
    return m.state_at(s)


def endpoint(word: DubinsWord, q0) -> np.ndarray:
    m = to_motion(word, q0, 0.0, 1.0)
    return m.state_at(m.end)


def mirror(q) -> np.ndarray:
    """Reflection about the x-axis."""
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2]])


__all__ = [
    "WORDS", "DubinsWord", "PathSet", "InadmissibleTurn", "min_turn_radius", "shortest_path", "shortest_paths",
    "shortest_lengths", "lengths_between", "word_lengths", "to_motion", "to_trajectory", "sample_path", "endpoint",
    "mirror",
]
