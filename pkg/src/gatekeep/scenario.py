"""Scenario files (YAML), leader-path CSV ingestion and the seeded scenario generator."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .baseline import CbfConfig
from .constraints import EngagementZone, SafeSet
from .core import AgentState, CostConfig, CostVariant, InputBounds, InvalidInput, SampledTrajectory
from .dubins import min_turn_radius
from .gatekeeper import GatekeeperConfig
from .mission import FormationOffset, LeaderPath
from .sim import Scenario, ScenarioError

_MISSING = object()
REQUIRED = ("zones", "leader", "followers", "bounds")
SECTIONS = REQUIRED + ("gatekeeper", "cbf", "sim", "generator")


def _check_keys(d: dict, allowed, path: str):
    if not isinstance(d, dict):
        raise ScenarioError(path, "expected a mapping")
    for k in d:
        if k not in allowed:
            raise ScenarioError(f"{path}.{k}" if path else str(k), "unknown field")


def _num(d: dict, key: str, path: str, default: Any = _MISSING, kind=float):
    if key not in d or d[key] is None:
        if default is _MISSING:
            raise ScenarioError(f"{path}.{key}", "missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{path}.{key}", f"expected a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ScenarioError(f"{path}.{key}", f"expected an integer, got {v!r}")
        return int(v)
    if not math.isfinite(float(v)):
        raise ScenarioError(f"{path}.{key}", "must be finite")
    return float(v)


def _vec(d: dict, key: str, path: str, n: int):
    v = d.get(key, _MISSING)
    if v is _MISSING or v is None:
        raise ScenarioError(f"{path}.{key}", "missing")
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ScenarioError(f"{path}.{key}", f"expected a list of {n} numbers")
    out = []
    for i, c in enumerate(v):
        if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(float(c)):
            raise ScenarioError(f"{path}.{key}[{i}]", f"expected a finite number, got {c!r}")
        out.append(float(c))
    return out


def _build(path: str, fn):
    try:
        return fn()
    except ScenarioError:
        raise
    except (ValueError, TypeError) as e:
        raise ScenarioError(path, str(e)) from None


def parse_scenario(doc: Any, base_dir: Optional[Path] = None) -> Scenario:
    """Validate a parsed YAML document and build the :class:`Scenario`."""
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "expected a mapping at the top level")
    _check_keys(doc, SECTIONS, "")
    for k in REQUIRED:
        if k not in doc:
            raise ScenarioError(k, "missing section")

    b = doc["bounds"]
    _check_keys(b, ("v_min", "v_max", "omega_max"), "bounds")
    bounds = _build("bounds", lambda: InputBounds(_num(b, "v_min", "bounds"), _num(b, "v_max", "bounds"),
                                                  _num(b, "omega_max", "bounds")))

    if not isinstance(doc["zones"], list):
        raise ScenarioError("zones", "expected a list")
    zones = []
    for i, z in enumerate(doc["zones"]):
        p = f"zones[{i}]"
        _check_keys(z, ("center", "orientation", "R_max", "R_min", "aspect_exponent"), p)
        zones.append(_build(p, lambda: EngagementZone(
            tuple(_vec(z, "center", p, 2)), _num(z, "orientation", p, 0.0), _num(z, "R_max", p),
            _num(z, "R_min", p), _num(z, "aspect_exponent", p, 1.0))))

    if not isinstance(doc["followers"], list):
        raise ScenarioError("followers", "expected a list")
    offsets = []
    for i, f in enumerate(doc["followers"]):
        p = f"followers[{i}]"
        _check_keys(f, ("lateral", "longitudinal"), p)
        offsets.append(FormationOffset(_num(f, "lateral", p, 0.0), _num(f, "longitudinal", p, 0.0)))

    g = doc.get("gatekeeper") or {}
    _check_keys(g, ("T_H", "replan_period", "switch_grid_count", "backup_join_candidates", "T_B_max", "margin",
                    "join_lookahead", "cost"), "gatekeeper")
    c = g.get("cost") or {}
    _check_keys(c, ("Q", "R", "gamma", "variant"), "gatekeeper.cost")
    d = GatekeeperConfig()

    def _cost():
        variant = c.get("variant", CostVariant.QUADRATIC.value)
        if variant not in CostVariant._value2member_map_:
            raise ScenarioError("gatekeeper.cost.variant", f"expected one of {[v.value for v in CostVariant]}")
        Q = np.array(c["Q"], dtype=float) if "Q" in c else d.cost.Q
        R = np.array(c["R"], dtype=float) if "R" in c else d.cost.R
        return CostConfig(Q, R, _num(c, "gamma", "gatekeeper.cost", 0.0), CostVariant(variant))

    cost = _build("gatekeeper.cost", _cost)
    gk = _build("gatekeeper", lambda: GatekeeperConfig(
        T_H=_num(g, "T_H", "gatekeeper", d.T_H),
        replan_period=_num(g, "replan_period", "gatekeeper", d.replan_period),
        switch_grid_count=_num(g, "switch_grid_count", "gatekeeper", d.switch_grid_count, int),
        backup_join_candidates=_num(g, "backup_join_candidates", "gatekeeper", d.backup_join_candidates, int),
        T_B_max=_num(g, "T_B_max", "gatekeeper", d.T_B_max),
        cost=cost,
        margin=_num(g, "margin", "gatekeeper", d.margin),
        join_lookahead=_num(g, "join_lookahead", "gatekeeper", d.join_lookahead)))

    cb = doc.get("cbf") or {}
    _check_keys(cb, ("alpha_gain", "slack_weight"), "cbf")
    dc = CbfConfig()
    cbf = _build("cbf", lambda: CbfConfig(_num(cb, "alpha_gain", "cbf", dc.alpha_gain),
                                          _num(cb, "slack_weight", "cbf", dc.slack_weight)))

    s = doc.get("sim") or {}
    _check_keys(s, ("duration", "dt", "seed", "planner_iterations"), "sim")
    dt = _num(s, "dt", "sim", 0.005)
    duration = _num(s, "duration", "sim", None)
    seed = _num(s, "seed", "sim", 0, int)
    iters = _num(s, "planner_iterations", "sim", 400, int)

    ld = doc["leader"]
    _check_keys(ld, ("start", "goal", "path_csv", "agent_id"), "leader")
    leader_path = None
    if "path_csv" in ld:
        csv_path = Path(str(ld["path_csv"]))
        if base_dir is not None and not csv_path.is_absolute():
            csv_path = base_dir / csv_path
        agent = _num(ld, "agent_id", "leader", 0, int)
        traj = _build("leader.path_csv", lambda: read_leader_csv(csv_path, agent, dt))
        leader_path = _build("leader.path_csv", lambda: LeaderPath.from_trajectory(
            traj, bounds, SafeSet(zones, gk.margin)))
        start = AgentState.from_array(traj.states[0])
        goal = AgentState.from_array(traj.states[-1])
    else:
        start = AgentState(*_vec(ld, "start", "leader", 3))
        goal = AgentState(*_vec(ld, "goal", "leader", 3))

    return Scenario(zones=tuple(zones), leader_start=start, leader_goal=goal, offsets=tuple(offsets),
                    bounds=bounds, gk=gk, cbf=cbf, duration=duration, dt=dt, seed=seed,
                    planner_iterations=iters, leader_path=leader_path)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError("<file>", f"cannot read {path}: {e.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError("<file>", f"not valid YAML: {e}") from None
    return parse_scenario(doc, path.parent)


def read_leader_csv(path, agent_id: int = 0, dt: Optional[float] = None) -> SampledTrajectory:
    """Rows of one agent from a trajectories CSV as a grid trajectory.

    The recorded states are kept verbatim; they must be reproduced by exact
    propagation of the recorded inputs to within 1e-9.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.DictReader(fh) if int(r["agent_id"]) == agent_id]
    except OSError as e:
        raise InvalidInput(f"cannot read {path}: {e.strerror}") from None
    except (KeyError, ValueError) as e:
        raise InvalidInput(f"malformed trajectory CSV: {e}") from None
    if len(rows) < 2:
        raise InvalidInput(f"agent {agent_id} has fewer than two rows")
    t = np.array([float(r["t"]) for r in rows])
    X = np.array([[float(r["x"]), float(r["y"]), float(r["theta"])] for r in rows])
    U = np.array([[float(r["v"]), float(r["omega"])] for r in rows])
    step_dt = float(t[1] - t[0])
    if dt is None:
        dt = step_dt
    if np.max(np.abs(np.diff(t) - dt)) > 1e-9:
        raise InvalidInput(f"sample times are not uniform at dt={dt}")
    traj = SampledTrajectory.from_arrays(float(t[0]), dt, X, U[:-1])
    res = traj.dynamics_residual()
    if res > 1e-9:
        raise InvalidInput(f"recorded states do not follow the recorded inputs (residual {res:.3g})")
    return traj


def scenario_to_dict(sc: Scenario) -> dict:
    """Plain-data form of a scenario suitable for :func:`parse_scenario`."""
    gk = sc.gk
    return {
        "zones": [{"center": list(z.center), "orientation": z.orientation, "R_max": z.R_max, "R_min": z.R_min,
                   "aspect_exponent": z.aspect_exponent} for z in sc.zones],
        "leader": {"start": list(sc.leader_start.as_array()), "goal": list(sc.leader_goal.as_array())},
        "followers": [{"lateral": o.lateral, "longitudinal": o.longitudinal} for o in sc.offsets],
        "bounds": {"v_min": sc.bounds.v_min, "v_max": sc.bounds.v_max, "omega_max": sc.bounds.omega_max},
        "gatekeeper": {"T_H": gk.T_H, "replan_period": gk.replan_period, "switch_grid_count": gk.switch_grid_count,
                       "backup_join_candidates": gk.backup_join_candidates, "T_B_max": gk.T_B_max,
                       "margin": gk.margin, "join_lookahead": gk.join_lookahead,
                       "cost": {"Q": gk.cost.Q.tolist(), "R": gk.cost.R.tolist(), "gamma": gk.cost.gamma,
                                "variant": gk.cost.variant.value}},
        "cbf": {"alpha_gain": sc.cbf.alpha_gain, "slack_weight": sc.cbf.slack_weight},
        "sim": {"duration": sc.duration, "dt": sc.dt, "seed": sc.seed, "planner_iterations": sc.planner_iterations},
    }


def dump_yaml(doc: dict) -> str:
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)


# ---------------------------------------------------------------------------
# generator


class GenerationFailure(RuntimeError):
    """Zone placement could not satisfy the clearance rules."""


def generate_scenario(seed: int, n_zones: int, *, corridor_gap: float = 0.25, lateral: float = 0.5,
                      max_tries: int = 20000) -> dict:
    """Seeded random zone field between a fixed start and goal.

    Zones are kept clear of every agent's start and of the goal. Two zones
    either overlap or leave a gap of at least ``corridor_gap``, so no corridor
    is a sliver, yet most are narrower than the formation (``2 * lateral``).
    """
    if n_zones < 0:
        raise ValueError("n_zones must be >= 0")
    rng = np.random.default_rng(seed)
    b = InputBounds()
    gk = GatekeeperConfig()
    length = 8.0 if n_zones <= 16 else 8.0 + 0.5 * (n_zones - 16)
    start = np.array([0.0, 0.0, 0.0])
    goal = np.array([length, 0.0, 0.0])
    keep_clear = [start[:2], start[:2] + (0, lateral), start[:2] - (0, lateral), goal[:2]]
    clearance = 2 * min_turn_radius(b) + gk.margin + 0.25
    zones: list[dict] = []
    tries = 0
    while len(zones) < n_zones:
        tries += 1
        if tries > max_tries:
            raise GenerationFailure(f"placed {len(zones)} of {n_zones} zones in {max_tries} tries")
        c = np.array([rng.uniform(1.5, length - 1.5), rng.uniform(-2.5, 2.5)])
        r_max = rng.uniform(0.5, 0.9)
        r_min = r_max * rng.uniform(0.3, 0.6)
        k = rng.uniform(1.0, 3.0)
        orient = rng.uniform(-math.pi, math.pi)
        if any(np.hypot(*(c - p)) - r_max < clearance for p in keep_clear):
            continue
        ok = True
        for z in zones:
            gap = np.hypot(*(c - np.array(z["center"]))) - r_max - z["R_max"]
            if 0.0 < gap < corridor_gap:
                ok = False
                break
        if not ok:
            continue
        zones.append({"center": [round(float(c[0]), 6), round(float(c[1]), 6)],
                      "orientation": round(float(orient), 6), "R_max": round(float(r_max), 6),
                      "R_min": round(float(r_min), 6), "aspect_exponent": round(float(k), 6)})
    sc = Scenario(offsets=(FormationOffset(lateral, 0.0), FormationOffset(-lateral, 0.0)))
    doc = scenario_to_dict(sc)
    doc["zones"] = zones
    doc["leader"] = {"start": [float(v) for v in start], "goal": [float(v) for v in goal]}
    doc["sim"]["seed"] = int(seed)
    doc["generator"] = {"seed": int(seed), "n_zones": int(n_zones), "corridor_gap": corridor_gap,
                        "note": "zone pairs are either overlapping or at least corridor_gap apart"}
    return doc


__all__ = [
    "parse_scenario", "load_scenario", "read_leader_csv", "scenario_to_dict", "dump_yaml", "generate_scenario",
    "GenerationFailure",
]
