"""Gatekeeper safety filtering for Dubins-vehicle formations among engagement zones."""

from .baseline import CbfConfig, CbfResult, cbf_constraint_row, solve_cbf_qp
from .constraints import EngagementZone, SafeSet, state_safe, trajectory_safe, zone_value
from .core import (
    AgentState,
    ControlInput,
    CostConfig,
    CostVariant,
    DomainError,
    InputBounds,
    InvalidInput,
    Motion,
    SampledTrajectory,
    integrate_cost,
    propagate_exact,
    resample,
    running_cost,
    wrap_angle,
)
from .dubins import DubinsWord, InadmissibleTurn, min_turn_radius, shortest_path, to_trajectory
from .gatekeeper import (
    BackupTrajectory,
    Candidate,
    CommittedTrajectory,
    GatekeeperConfig,
    InitialCommitFailure,
    find_backup,
    gatekeeper_step,
    make_candidate,
    select_candidate,
    suboptimality_report,
)
from .mission import (
    FormationOffset,
    LeaderPath,
    PlanningFailure,
    backup_controller,
    offset_nominal,
    plan_leader_path,
    tracking_control,
)
from .sim import Method, RunMetrics, Scenario, ScenarioError, run

__version__ = "0.1.0"
