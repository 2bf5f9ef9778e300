"""Engagement-zone constraints and the safe set they define.

The zone function is a heading-dependent stand-in: the keep-out range around
a zone centre varies with the aspect angle between the bearing from the
centre to the agent and the agent's heading,

    R(alpha) = R_min + (R_max - R_min) * ((1 + cos alpha) / 2) ** k
    h(s)     = |p - c| - R(alpha),  alpha = wrap(atan2(p - c) - theta - orientation)

so h >= 0 outside the zone. Any object exposing ``values(states)`` (an
``(N, 3) -> (N,)`` map) can stand in for :class:`EngagementZone` inside a
:class:`SafeSet`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import AgentState, DomainError, SampledTrajectory, wrap_angle


@dataclass(frozen=True)
class EngagementZone:
    center: tuple[float, float]
    orientation: float = 0.0
    R_max: float = 1.0
    R_min: float = 0.5
    aspect_exponent: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if not (0 < self.R_min <= self.R_max):
            raise ValueError(f"need 0 < R_min <= R_max, got {self.R_min}, {self.R_max}")
        if not self.aspect_exponent >= 1:
            raise ValueError("aspect_exponent must be >= 1")

    def range_at(self, alpha):
        base = 0.5 * (1.0 + np.cos(alpha))
        return self.R_min + (self.R_max - self.R_min) * base ** self.aspect_exponent

    def values(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        dx = states[:, 0] - self.center[0]
        dy = states[:, 1] - self.center[1]
        alpha = wrap_angle(np.arctan2(dy, dx) - states[:, 2] - self.orientation)
        return np.hypot(dx, dy) - self.range_at(alpha)

    def gradient(self, s) -> np.ndarray:
        """Analytic gradient of h with respect to (x, y, theta)."""
        x, y, th = (float(c) for c in s)
        dx, dy = x - self.center[0], y - self.center[1]
        rho2 = dx * dx + dy * dy
        if rho2 < 1e-24:
            return np.zeros(3)
        rho = math.sqrt(rho2)
        alpha = wrap_angle(math.atan2(dy, dx) - th - self.orientation)
        k = self.aspect_exponent
        base = 0.5 * (1.0 + math.cos(alpha))
        # dR/dalpha; base**(k-1) is safe for k >= 1
        dR = (self.R_max - self.R_min) * k * base ** (k - 1) * (-0.5 * math.sin(alpha))
        dadx, dady = -dy / rho2, dx / rho2
        return np.array([dx / rho - dR * dadx, dy / rho - dR * dady, dR])


def zone_value(z: EngagementZone, s: AgentState) -> float:
    """Signed clearance of ``s`` from zone ``z`` (LU); negative inside."""
    return float(z.values(s.as_array())[0])


class SafeSet:
    """Conjunction of zone constraints with a safety margin.

    A state is safe when ``min_j h_j(s) >= margin``. The set is time-invariant;
    ``t`` arguments are accepted for generality and ignored.
    """

    def __init__(self, zones: Sequence[EngagementZone] = (), margin: float = 0.02):
        if margin < 0:
            raise ValueError("margin must be >= 0")
        self.zones = tuple(zones)
        self.margin = float(margin)
        self._vectorizable = all(isinstance(z, EngagementZone) for z in self.zones)
        if self._vectorizable and self.zones:
            self._c = np.array([z.center for z in self.zones])
            self._psi = np.array([z.orientation for z in self.zones])
            self._rmax = np.array([z.R_max for z in self.zones])
            self._rmin = np.array([z.R_min for z in self.zones])
            self._k = np.array([z.aspect_exponent for z in self.zones])

    def with_margin(self, margin: float) -> "SafeSet":
        return SafeSet(self.zones, margin)

    def values(self, states) -> np.ndarray:
        """Zone values, shape ``(N, n_zones)``."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if not self.zones:
            return np.empty((len(states), 0))
        if not self._vectorizable:
            return np.stack([z.values(states) for z in self.zones], axis=1)
        dx = states[:, 0:1] - self._c[None, :, 0]
        dy = states[:, 1:2] - self._c[None, :, 1]
        alpha = np.arctan2(dy, dx) - states[:, 2:3] - self._psi[None, :]
        base = 0.5 * (1.0 + np.cos(alpha))  # cos is 2pi-periodic, no wrap needed
        R = self._rmin + (self._rmax - self._rmin) * base ** self._k
        return np.hypot(dx, dy) - R

    def gradients(self, s) -> tuple[np.ndarray, np.ndarray]:
        """Zone values ``(Z,)`` and analytic gradients ``(Z, 3)`` at a single state."""
        s = np.asarray(s, dtype=float)
        if not self.zones:
            return np.empty(0), np.empty((0, 3))
        if not self._vectorizable:
            return self.values(s)[0], np.array([z.gradient(s) for z in self.zones])
        dx = s[0] - self._c[:, 0]
        dy = s[1] - self._c[:, 1]
        rho2 = dx * dx + dy * dy
        rho = np.sqrt(rho2)
        alpha = np.arctan2(dy, dx) - s[2] - self._psi
        base = 0.5 * (1.0 + np.cos(alpha))
        span = self._rmax - self._rmin
        h = rho - (self._rmin + span * base ** self._k)
        dR = span * self._k * base ** (self._k - 1) * (-0.5 * np.sin(alpha))
        safe = np.where(rho2 < 1e-24, 1.0, rho2)
        g = np.stack([dx / np.sqrt(safe) + dR * dy / safe, dy / np.sqrt(safe) - dR * dx / safe, dR], axis=1)
        g[rho2 < 1e-24] = 0.0
        return h, g

    def clears(self, states) -> np.ndarray:
        """Per state, whether every zone value is at least the margin.

        Zone/state pairs farther apart than ``R_max + margin`` clear trivially
        (``h >= |p - c| - R_max``), so the full formula is evaluated only on the
        remaining pairs.
        """
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if not self.zones:
            return np.ones(len(states), dtype=bool)
        if not self._vectorizable:
            return self.min_values(states) >= self.margin
        dx = states[:, 0:1] - self._c[None, :, 0]
        dy = states[:, 1:2] - self._c[None, :, 1]
        rho = np.hypot(dx, dy)
        close = rho - self._rmax[None, :] < self.margin + 1e-12
        si, zi = np.nonzero(close)
        ok = np.ones(len(states), dtype=bool)
        if len(si) == 0:
            return ok
        alpha = np.arctan2(dy[si, zi], dx[si, zi]) - states[si, 2] - self._psi[zi]
        base = 0.5 * (1.0 + np.cos(alpha))
        h = rho[si, zi] - (self._rmin[zi] + (self._rmax[zi] - self._rmin[zi]) * base ** self._k[zi])
        ok[si[h < self.margin]] = False
        return ok

    def min_values(self, states) -> np.ndarray:
        """Minimum zone value per state; ``+inf`` with no zones."""
        v = self.values(states)
        if v.shape[1] == 0:
            return np.full(v.shape[0], np.inf)
        return v.min(axis=1)


def state_safe(ss: SafeSet, t: float, s: AgentState) -> tuple[bool, float]:
    """Whether ``s`` clears every zone by the margin, and the smallest zone value."""
    m = float(ss.min_values(s.as_array())[0])
    return m >= ss.margin, m


def trajectory_safe(ss: SafeSet, traj: SampledTrajectory, a: float, b: float) -> tuple[bool, Optional[float]]:
    """Check every sample in ``[a, b]``; returns the earliest violating sample time."""
    t = traj.times
    if a < t[0] - 1e-9 or b > t[-1] + 1e-9 or b < a:
        raise DomainError(f"interval [{a}, {b}] outside trajectory domain [{t[0]}, {t[-1]}]")
    sel = (t >= a - 1e-9) & (t <= b + 1e-9)
    h = ss.min_values(traj.states[sel])
    bad = np.nonzero(h < ss.margin)[0]
    if len(bad) == 0:
        return True, None
    return False, float(t[sel][bad[0]])
