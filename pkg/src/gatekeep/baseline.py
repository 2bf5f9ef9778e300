"""CBF-QP safety filter used as the comparison baseline.

Each zone contributes one linear constraint on the input,

    dh/dp . (cos theta, sin theta) * v + dh/dtheta * omega >= -alpha_gain * h,

and the filter picks the admissible input closest to the nominal one. With two
decision variables the QP is solved exactly by enumerating the points where
the optimum can lie. When the rows conflict, a slacked problem is solved
instead; it is always feasible but may let h go negative.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constraints import EngagementZone, SafeSet
from .core import AgentState, ControlInput, InputBounds


@dataclass(frozen=True)
class CbfConfig:
    alpha_gain: float = 5.0
    slack_weight: float = 1e3

    def __post_init__(self):
        if not self.alpha_gain > 0:
            raise ValueError("alpha_gain must be > 0")
        if not self.slack_weight > 0:
            raise ValueError("slack_weight must be > 0")


@dataclass(frozen=True)
class CbfResult:
    u: ControlInput
    slack_norm: float
    feasible: bool


def _rows(h, grad, theta, alpha_gain):
    A = np.stack([grad[:, 0] * math.cos(theta) + grad[:, 1] * math.sin(theta), grad[:, 2]], axis=1)
    return A, -alpha_gain * h


def cbf_constraint_row(z: EngagementZone, s: AgentState, cfg: CbfConfig = CbfConfig()) -> tuple[np.ndarray, float]:
    """``(a, b_rhs)`` such that the CBF condition reads ``a . u >= b_rhs``."""
    h = float(z.values(s.as_array())[0])
    A, b = _rows(np.array([h]), z.gradient(s.as_array())[None, :], s.theta, cfg.alpha_gain)
    return A[0], float(b[0])


def cbf_rows(ss: SafeSet, s, cfg: CbfConfig) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=float)
    h, g = ss.gradients(s)
    return _rows(h, g, s[2], cfg.alpha_gain)


def _box_rows(lo, hi):
    G = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    g = np.array([lo[0], -hi[0], lo[1], -hi[1]])
    return G, g


def _prune(A, b, lo, hi):
    """Drop rows satisfied on the whole box (checked at its corners, exact for half-planes)."""
    if len(A) == 0:
        return A, b
    corners = np.array([[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]])
    keep = np.min(A @ corners.T, axis=1) < b
    return A[keep], b[keep]


def solve_box_qp(u_nom, A, b, lo, hi) -> tuple[np.ndarray, bool]:
    """Exact minimizer of ``|u - u_nom|^2`` over ``{A u >= b, lo <= u <= hi}``.

    In two dimensions the optimum is the unconstrained point, the projection
    onto one constraint line, or a vertex where two lines meet; all of them are
    enumerated and the best feasible one is kept.
    """
    u_nom = np.asarray(u_nom, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float)
    A, b = _prune(A, b, lo, hi)
    Gb, gb = _box_rows(lo, hi)
    G = np.vstack([A, Gb])
    g = np.concatenate([b, gb])
    nrm2 = np.sum(G * G, axis=1)
    ok = nrm2 > 1e-28
    G, g, nrm2 = G[ok], g[ok], nrm2[ok]

    pts = [u_nom[None, :]]
    pts.append(u_nom + ((g - G @ u_nom) / nrm2)[:, None] * G)
    m = len(G)
    if m >= 2:
        i, j = np.array(list(itertools.combinations(range(m), 2))).T
        det = G[i, 0] * G[j, 1] - G[i, 1] * G[j, 0]
        good = np.abs(det) > 1e-14 * np.sqrt(nrm2[i] * nrm2[j])
        i, j, det = i[good], j[good], det[good]
        x0 = (g[i] * G[j, 1] - G[i, 1] * g[j]) / det
        x1 = (G[i, 0] * g[j] - g[i] * G[j, 0]) / det
        pts.append(np.stack([x0, x1], axis=1))
    P = np.vstack(pts)
    tol = 1e-9 * (1.0 + np.abs(g) + np.sqrt(nrm2) * np.max(np.abs(P)))
    feas = np.all(P @ G.T >= g - tol, axis=1)
    if not feas.any():
        return np.clip(u_nom, lo, hi), False
    obj = np.where(feas, np.sum((P - u_nom) ** 2, axis=1), np.inf)
    return np.clip(P[int(np.argmin(obj))], lo, hi), True


def _slack_objective(u, u_nom, A, b, w):
    r = np.maximum(0.0, b - A @ u)
    return float(np.sum((u - u_nom) ** 2) + w * np.sum(r * r))


def _box_quadratic_min(H, c, lo, hi):
    """Exact minimizer of ``u.H.u/2 - c.u`` over a 2-D box (H positive definite)."""
    u = np.linalg.solve(H, c)
    if np.all(u >= lo) and np.all(u <= hi):
        return u
    best, arg = math.inf, None
    for k in range(2):
        o = 1 - k
        for val in (lo[k], hi[k]):
            # fix coordinate k on a face, minimize over the other
            uo = (c[o] - H[o, k] * val) / H[o, o]
            uo = min(max(uo, lo[o]), hi[o])
            p = np.empty(2)
            p[k], p[o] = val, uo
            f = 0.5 * p @ H @ p - c @ p
            if f < best:
                best, arg = f, p
    return arg


def solve_slack_qp(u_nom, A, b, lo, hi, w: float, iters: int = 100) -> np.ndarray:
    """Minimize ``|u - u_nom|^2 + w * sum(max(0, b - A u)^2)`` over the box.

    Equivalent to the slacked QP with one nonnegative slack per row (the
    optimal slack is the row violation). Solved by active-set Newton steps on
    the violated rows with a backtracking safeguard.
    """
    u_nom = np.asarray(u_nom, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    u = np.clip(u_nom, lo, hi)
    f = _slack_objective(u, u_nom, A, b, w)
    for _ in range(iters):
        act = b - A @ u > 0
        As, bs = A[act], b[act]
        H = 2.0 * (np.eye(2) + w * As.T @ As)
        c = 2.0 * (u_nom + w * As.T @ bs)
        cand = _box_quadratic_min(H, c, lo, hi)
        fc = _slack_objective(cand, u_nom, A, b, w)
        t = 1.0
        while fc > f and t > 1e-12:
            t *= 0.5
            trial = u + t * (cand - u)
            fc = _slack_objective(trial, u_nom, A, b, w)
            if fc <= f:
                cand = trial
        if fc > f or np.max(np.abs(cand - u)) < 1e-15:
            break
        u, f = cand, fc
    return u


def solve_cbf_qp(s, u_nom: ControlInput, zones: Sequence[EngagementZone] | SafeSet, b: InputBounds,
                 cfg: CbfConfig = CbfConfig()) -> CbfResult:
    """Filter ``u_nom`` through the CBF constraints of every zone."""
    ss = zones if isinstance(zones, SafeSet) else SafeSet(zones, 0.0)
    x = s.as_array() if isinstance(s, AgentState) else np.asarray(s, dtype=float)
    un = u_nom.as_array() if isinstance(u_nom, ControlInput) else np.asarray(u_nom, dtype=float)
    lo = np.array([b.v_min, -b.omega_max])
    hi = np.array([b.v_max, b.omega_max])
    A, rhs = cbf_rows(ss, x, cfg)
    u, ok = solve_box_qp(un, A, rhs, lo, hi)
    if ok:
        return CbfResult(ControlInput(*u), 0.0, True)
    A, rhs = _prune(A, rhs, lo, hi)
    u = solve_slack_qp(un, A, rhs, lo, hi, cfg.slack_weight)
    slack = np.maximum(0.0, rhs - A @ u)
    return CbfResult(ControlInput(*u), float(np.linalg.norm(slack)), False)


__all__ = [
    "CbfConfig", "CbfResult", "cbf_constraint_row", "cbf_rows", "solve_box_qp", "solve_slack_qp", "solve_cbf_qp",
]
