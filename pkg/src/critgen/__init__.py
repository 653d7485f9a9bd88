"""Critical-obstacle inference and scenario generation for motion planners.

Given recorded motion plans, infer where and when obstacles must have been
for each plan to be optimal, sample diverse dynamic-obstacle scenarios
through those critical points, render LiDAR training records, score dataset
coverage, and evaluate planners in a dynamic-obstacle benchmark.
"""

from .coverage import (
    AxisSpec,
    CoverageConfig,
    CoverageGrid,
    CoverageReport,
    FeatureSample,
    bin_of,
    coverage_curve,
    coverage_report,
    dcs,
    features_of,
)
from .decoder import (
    DecoderConfig,
    DecodeResult,
    MaskedObstacle,
    TemporalMask,
    decode,
    plan_cost,
    plan_from_positions,
    reconstruction_mse,
    straight_line_plan,
)
from .filtering import FilterConfig, FilterReport, filter_critical_points
from .generation import (
    GeneratorConfig,
    ObstacleTrajectory,
    Scenario,
    TrajectorySamplingError,
    augment_random_obstacles,
    generate_scenarios,
    sample_trajectory,
    select_open_space_plans,
)
from .geometry import (
    DEFAULT_DT,
    DEFAULT_HORIZON,
    DEFAULT_ROBOT_RADIUS,
    Action,
    LidarConfig,
    Obstacle,
    Plan,
    Pose2,
    min_clearance,
    normalize_angle,
    raycast,
)
from .hallucination import (
    CriticalPoint,
    HallucinationConfig,
    ObstacleHypothesis,
    extract_critical_points,
    fit_phase1,
    fit_phase2,
    gumbel_softmax_mask,
    tau_schedule,
)
from .manifest import TOOL_VERSION, PipelineManifest, child_rng, child_seed
from .pipeline import PipelineConfig, coverage_samples, infer_critical_points
from .planners import (
    ConstantPlanner,
    GapFollowerPlanner,
    PlannerInterface,
    ReplayPlanner,
    SubprocessPlanner,
    serve_planner,
)
from .rendering import TrainingRecord, build_records, render_scan
from .simulation import (
    TrialConfig,
    TrialResult,
    WorldGenConfig,
    WorldSpec,
    generate_worlds,
    goal_lookahead,
    run_trial,
    success_rate,
)
from .spsa import SpsaResult, minimize_spsa

__version__ = TOOL_VERSION

__all__ = [
    "Action",
    "AxisSpec",
    "ConstantPlanner",
    "CoverageConfig",
    "CoverageGrid",
    "CoverageReport",
    "CriticalPoint",
    "DecodeResult",
    "DecoderConfig",
    "DEFAULT_DT",
    "DEFAULT_HORIZON",
    "DEFAULT_ROBOT_RADIUS",
    "FeatureSample",
    "FilterConfig",
    "FilterReport",
    "GapFollowerPlanner",
    "GeneratorConfig",
    "HallucinationConfig",
    "LidarConfig",
    "MaskedObstacle",
    "Obstacle",
    "ObstacleHypothesis",
    "ObstacleTrajectory",
    "PipelineConfig",
    "PipelineManifest",
    "Plan",
    "PlannerInterface",
    "Pose2",
    "ReplayPlanner",
    "Scenario",
    "SpsaResult",
    "SubprocessPlanner",
    "TemporalMask",
    "TOOL_VERSION",
    "TrainingRecord",
    "TrajectorySamplingError",
    "TrialConfig",
    "TrialResult",
    "WorldGenConfig",
    "WorldSpec",
    "augment_random_obstacles",
    "bin_of",
    "build_records",
    "child_rng",
    "child_seed",
    "coverage_curve",
    "coverage_report",
    "coverage_samples",
    "dcs",
    "decode",
    "extract_critical_points",
    "features_of",
    "filter_critical_points",
    "fit_phase1",
    "fit_phase2",
    "generate_scenarios",
    "generate_worlds",
    "goal_lookahead",
    "gumbel_softmax_mask",
    "infer_critical_points",
    "min_clearance",
    "minimize_spsa",
    "normalize_angle",
    "plan_cost",
    "plan_from_positions",
    "raycast",
    "reconstruction_mse",
    "render_scan",
    "run_trial",
    "sample_trajectory",
    "select_open_space_plans",
    "serve_planner",
    "straight_line_plan",
    "success_rate",
    "tau_schedule",
]
