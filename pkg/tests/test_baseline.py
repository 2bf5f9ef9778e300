import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from cases import BOX_HI, BOX_LO, qp_instances, random_zone
from gatekeep.baseline import (
    CbfConfig,
    cbf_constraint_row,
    cbf_rows,
    solve_box_qp,
    solve_cbf_qp,
    solve_slack_qp,
)
from gatekeep.constraints import EngagementZone, SafeSet
from gatekeep.core import AgentState, ControlInput, InputBounds
from oracles import box_qp_grid_oracle

B = InputBounds()


def _fd_row(z, s, cfg):
    """Row built from central differences of the zone value."""
    e = 1e-6
    g = np.array([(z.values(s + d)[0] - z.values(s - d)[0]) / (2 * e) for d in e * np.eye(3)])
    return np.array([g[0] * math.cos(s[2]) + g[1] * math.sin(s[2]), g[2]]), -cfg.alpha_gain * z.values(s)[0]


def _slack_penalty(u, u_nom, A, b, w):
    r = np.maximum(0.0, b - A @ u)
    return float(np.sum((u - u_nom) ** 2) + w * np.sum(r * r))


def _slack_oracle(u_nom, A, b, w):
    """Multi-start L-BFGS-B on the (smooth, convex) penalty form."""
    best = math.inf
    for start in ([0.8, -10], [1.0, 10], [0.9, 0], list(np.clip(u_nom, BOX_LO, BOX_HI))):
        r = minimize(lambda u: _slack_penalty(u, u_nom, A, b, w), np.array(start, float), method="L-BFGS-B",
                     bounds=list(zip(BOX_LO, BOX_HI)), options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
        best = min(best, r.fun)
    return best


def test_config_validation():
    with pytest.raises(ValueError):
        CbfConfig(alpha_gain=0)
    with pytest.raises(ValueError):
        CbfConfig(slack_weight=-1)


def test_far_zone_row_is_inactive():
    z = EngagementZone((0, 0), 0, 0.5, 0.3)
    a, rhs = cbf_constraint_row(z, AgentState(10, 0, 1.0))
    assert rhs < -40
    corners = [(v, w) for v in (0.8, 1.0) for w in (-10, 10)]
    assert all(a @ np.array(c) >= rhs for c in corners)


def test_boundary_row_has_zero_rhs():
    z = EngagementZone((0, 0), 0, 1.0, 1.0)
    a, rhs = cbf_constraint_row(z, AgentState(1.0, 0, math.pi / 2))
    assert rhs == pytest.approx(0.0, abs=1e-15)
    # heading tangent to a round zone: the row says nothing about v
    assert a[0] == pytest.approx(0.0, abs=1e-12)


def test_rows_match_finite_differences(rng):
    cfg = CbfConfig()
    worst = 0.0
    for _ in range(100):
        z = random_zone(rng)
        s = np.array([rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-math.pi, math.pi)])
        a, rhs = cbf_constraint_row(z, AgentState(*s), cfg)
        a_fd, rhs_fd = _fd_row(z, s, cfg)
        worst = max(worst, np.max(np.abs(a - a_fd)) / max(1.0, np.max(np.abs(a_fd))))
        assert rhs == pytest.approx(rhs_fd, abs=1e-12)
        A2, b2 = cbf_rows(SafeSet([z]), s, cfg)
        assert np.allclose(A2[0], a, atol=1e-12) and b2[0] == pytest.approx(rhs, abs=1e-12)
    assert worst < 1e-5


def test_no_zones_returns_nominal():
    r = solve_cbf_qp(AgentState(0, 0, 0), ControlInput(0.9, 3.0), [], B)
    assert (r.u.v, r.u.omega, r.slack_norm, r.feasible) == (0.9, 3.0, 0.0, True)


def test_single_row_projection():
    # one half plane crossing the box interior: v + 0.01 omega >= 0.95
    A, b = np.array([[1.0, 0.01]]), np.array([0.95])
    u_nom = np.array([0.85, 0.0])
    u, ok = solve_box_qp(u_nom, A, b, BOX_LO, BOX_HI)
    proj = u_nom + (b[0] - A[0] @ u_nom) / (A[0] @ A[0]) * A[0]
    assert ok and np.allclose(u, proj, atol=1e-12)
    f_or, _ = box_qp_grid_oracle(u_nom, A, b, BOX_LO, BOX_HI)
    assert abs(np.sum((u - u_nom) ** 2) - f_or) < 1e-6


def test_conflicting_rows_fall_back_to_slack():
    A = np.array([[1.0, 0.0], [-1.0, 0.0]])
    b = np.array([0.95, -0.85])  # v >= 0.95 and v <= 0.85
    u, ok = solve_box_qp(np.array([0.9, 0.0]), A, b, BOX_LO, BOX_HI)
    assert not ok
    # boxed-in agent: zones on both sides and ahead
    s = AgentState(0, 0, 0)
    zones = [EngagementZone((0.0, 0.31), 0, 0.3, 0.3), EngagementZone((0.0, -0.31), 0, 0.3, 0.3),
             EngagementZone((0.32, 0.0), 0, 0.3, 0.3)]
    r = solve_cbf_qp(s, ControlInput(0.9, 0.0), zones, B)
    assert not r.feasible and r.slack_norm > 0
    assert r.u.admissible(B)


def test_stage_one_against_oracle():
    worst = 0.0
    for u_nom, A, b in qp_instances(7, 40):
        u, ok = solve_box_qp(u_nom, A, b, BOX_LO, BOX_HI)
        f_or, _ = box_qp_grid_oracle(u_nom, A, b, BOX_LO, BOX_HI)
        assert ok == math.isfinite(f_or)
        if ok:
            # re-substitution: every row and bound holds
            assert np.all(A @ u >= b - 1e-9) and np.all(u >= BOX_LO) and np.all(u <= BOX_HI)
            worst = max(worst, abs(np.sum((u - u_nom) ** 2) - f_or))
    assert worst < 1e-6


def test_stage_one_not_worse_than_feasible_grid():
    g = np.stack(np.meshgrid(np.linspace(0.8, 1, 41), np.linspace(-10, 10, 81), indexing="ij"), -1).reshape(-1, 2)
    for u_nom, A, b in qp_instances(11, 20):
        u, ok = solve_box_qp(u_nom, A, b, BOX_LO, BOX_HI)
        feas = np.all(g @ A.T >= b, axis=1)
        if ok and feas.any():
            assert np.sum((u - u_nom) ** 2) <= np.min(np.sum((g[feas] - u_nom) ** 2, axis=1)) + 1e-12


def test_slack_solver_against_oracle():
    w = CbfConfig().slack_weight
    for u_nom, A, b in qp_instances(3, 40):
        if solve_box_qp(u_nom, A, b, BOX_LO, BOX_HI)[1]:
            b = b + 0.5  # push into infeasibility
        u = solve_slack_qp(u_nom, A, b, BOX_LO, BOX_HI, w)
        mine = _slack_penalty(u, u_nom, A, b, w)
        ref = _slack_oracle(u_nom, A, b, w)
        assert mine <= ref + 1e-9 * max(1.0, ref)


@given(st.integers(0, 10_000))
def test_adding_a_zone_never_lowers_the_penalized_optimum(seed):
    rng = np.random.default_rng(seed)
    w = CbfConfig().slack_weight
    s = np.array([0.0, 0.0, rng.uniform(-math.pi, math.pi)])
    zones = [random_zone(rng, spread=0.8) for _ in range(3)]
    u_nom = np.array([rng.uniform(0.8, 1), rng.uniform(-10, 10)])
    A, b = cbf_rows(SafeSet(zones[:2], 0.0), s, CbfConfig())
    A3, b3 = cbf_rows(SafeSet(zones, 0.0), s, CbfConfig())
    f2 = _slack_penalty(solve_slack_qp(u_nom, A, b, BOX_LO, BOX_HI, w), u_nom, A, b, w)
    f3 = _slack_penalty(solve_slack_qp(u_nom, A3, b3, BOX_LO, BOX_HI, w), u_nom, A3, b3, w)
    assert f3 >= f2 - 1e-9 * max(1.0, f2)


def test_deterministic():
    u_nom, A, b = qp_instances(5, 1)[0]
    assert np.array_equal(solve_box_qp(u_nom, A, b, BOX_LO, BOX_HI)[0],
                          solve_box_qp(u_nom, A, b, BOX_LO, BOX_HI)[0])
