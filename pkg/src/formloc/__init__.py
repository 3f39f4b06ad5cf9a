"""Relative localization and distance-based formation control for planar
agent networks.

Agents measure squared distances to their graph neighbors plus their own
heading, estimate the neighbors' relative positions with a Kalman filter
whose prediction runs on a matrix Lie group of stacked planar offsets, and
feed those estimates to gradient-style formation controllers.  The package
bundles the group/filter/controller layers, observability rank tests, a
deterministic closed-loop scenario engine, and a CLI.
"""

from .controller import (
    EdgeOwnership,
    MismatchConfig,
    assign_ownership,
    estimated_control,
    formation_potential,
    ideal_control,
    mismatch_control,
)
from .estimator import (
    EstimatorState,
    NoiseConfig,
    SingularUpdateError,
    initialize,
    predict,
    update,
)
from .lie_group import (
    AlgebraElement,
    GroupElement,
    compose,
    exp,
    identity,
    inverse,
    left_invariant_basis,
    rotation,
    step_body_velocity,
    step_jacobian,
    wrap_angle,
)
from .network import (
    DesiredDistances,
    Graph,
    distance_errors,
    edge_offsets,
    incidence_matrix,
    neighbors,
    relative_position_stack,
    rigidity_matrix,
    sorted_neighbors,
)
from .observability import (
    CodistributionReport,
    GramianReport,
    codistribution_matrix,
    codistribution_rank,
    empirical_gramian,
    observation,
    observation_jacobian,
)
from .sim import (
    DivergenceError,
    MetricsSeries,
    OutcomeThresholds,
    ScenarioConfig,
    WorldState,
    detect_outcome,
    init_world,
    run,
    scenario_issue1,
    scenario_issue2,
    scenario_issue3,
    scenario_nominal,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "AlgebraElement",
    "CodistributionReport",
    "DesiredDistances",
    "DivergenceError",
    "EdgeOwnership",
    "EstimatorState",
    "GramianReport",
    "Graph",
    "GroupElement",
    "MetricsSeries",
    "MismatchConfig",
    "NoiseConfig",
    "OutcomeThresholds",
    "ScenarioConfig",
    "SingularUpdateError",
    "WorldState",
    "assign_ownership",
    "codistribution_matrix",
    "codistribution_rank",
    "compose",
    "detect_outcome",
    "distance_errors",
    "edge_offsets",
    "empirical_gramian",
    "estimated_control",
    "exp",
    "formation_potential",
    "ideal_control",
    "identity",
    "incidence_matrix",
    "init_world",
    "initialize",
    "inverse",
    "left_invariant_basis",
    "mismatch_control",
    "neighbors",
    "observation",
    "observation_jacobian",
    "predict",
    "relative_position_stack",
    "rigidity_matrix",
    "rotation",
    "run",
    "scenario_issue1",
    "scenario_issue2",
    "scenario_issue3",
    "scenario_nominal",
    "sorted_neighbors",
    "step",
    "step_body_velocity",
    "step_jacobian",
    "update",
    "wrap_angle",
    "__version__",
]
