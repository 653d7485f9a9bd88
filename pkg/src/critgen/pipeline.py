"""Pipeline orchestration: stage configs, seed fan-out, and parallel workers.

Each stage derives per-item child seeds from the master seed via
``manifest.child_seed(master, stage, index)``, so results are independent of
worker scheduling and partial re-runs reproduce exactly. Worker functions
live at module scope (picklable) and are bound with ``functools.partial``
for ``ProcessPoolExecutor.map``, which preserves input order.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence, TypeVar

import numpy as np

from .coverage import CoverageConfig, FeatureSample, features_of
from .filtering import FilterConfig, FilterReport, filter_critical_points
from .generation import (
    GeneratorConfig,
    Scenario,
    augment_random_obstacles,
    generate_scenarios,
)
from .geometry import DEFAULT_DT, DEFAULT_HORIZON, LidarConfig, Plan, Pose2
from .hallucination import (
    HallucinationConfig,
    extract_critical_points,
    fit_phase1,
    fit_phase2,
)
from .manifest import child_rng, child_seed
from .rendering import TrainingRecord, build_records
from .simulation import TrialConfig, TrialResult, WorldGenConfig, WorldSpec, run_trial

STAGE_INGEST = "ingest"
STAGE_HALLUCINATE = "hallucinate"
STAGE_GENERATE = "generate"
STAGE_RENDER = "render"
STAGE_COVERAGE = "coverage"
STAGE_WORLDS = "worlds"
STAGE_SIMULATE = "simulate"

T = TypeVar("T")
U = TypeVar("U")


# --- config plumbing -----------------------------------------------------------


def config_to_dict(cfg: Any) -> dict:
    return dataclasses.asdict(cfg)


def _coerce(tp: Any, val: Any) -> Any:
    if dataclasses.is_dataclass(tp):
        if isinstance(val, dict):
            return config_from_dict(tp, val)
        if isinstance(val, (list, tuple)):
            return tp(*val)
        return val
    origin = typing.get_origin(tp)
    if origin is tuple and isinstance(val, (list, tuple)):
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v) for v in val)
        if args and len(args) == len(val):
            return tuple(_coerce(a, v) for a, v in zip(args, val))
        return tuple(val)
    if origin in (typing.Union, types.UnionType):
        for arg in typing.get_args(tp):
            if arg is type(None):
                if val is None:
                    return None
            else:
                tp = arg
        return _coerce(tp, val)
    if tp is float and isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if tp is int and isinstance(val, (int, float)) and not isinstance(val, bool):
        return int(val)
    return val


def config_from_dict(cls: type[T], data: dict | None) -> T:
    """Rebuild a (possibly nested) config dataclass from plain JSON data.

    Unknown keys are rejected so config-file typos fail loudly.
    """
    if data is None:
        return cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    hints = typing.get_type_hints(cls)
    kwargs = {k: _coerce(hints[k], v) for k, v in data.items()}
    return cls(**kwargs)


@dataclass
class PipelineConfig:
    """Every stage's knobs in one declarative document."""

    dt: float = DEFAULT_DT
    horizon: int = DEFAULT_HORIZON
    ingest_stride: int = 10
    samples_per_hypothesis: int = 1
    hallucination: HallucinationConfig = field(default_factory=HallucinationConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    scan_history: int = 5
    action_horizon: int = 5
    coverage: CoverageConfig = field(default_factory=CoverageConfig)
    worldgen: WorldGenConfig = field(default_factory=WorldGenConfig)
    trial: TrialConfig = field(default_factory=TrialConfig)
    trials_per_world: int = 2

    def to_dict(self) -> dict:
        return config_to_dict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> PipelineConfig:
        return config_from_dict(cls, data)


def reduced_iteration_config(config: PipelineConfig) -> PipelineConfig:
    """Copy of the config with shortened two-phase fits for quick runs."""
    h = dataclasses.replace(
        config.hallucination,
        phase1_iters=min(config.hallucination.phase1_iters, 200),
        phase2_anneal_iters=min(config.hallucination.phase2_anneal_iters, 200),
        phase2_hard_iters=min(config.hallucination.phase2_hard_iters, 100),
    )
    return dataclasses.replace(config, hallucination=h)


# --- per-item stage functions ----------------------------------------------------


def infer_critical_points(
    plan: Plan,
    hallucination: HallucinationConfig,
    filter_config: FilterConfig,
    seed: int,
    samples_per_hypothesis: int = 1,
) -> FilterReport:
    """Two-phase fit, point extraction, and greedy filtering for one plan."""
    rng = np.random.default_rng(seed)
    phase1 = fit_phase1(plan, hallucination, rng)
    phase2 = fit_phase2(plan, phase1.hypotheses, hallucination, rng)
    points = extract_critical_points(phase2.hypotheses, rng, samples_per_hypothesis)
    return filter_critical_points(
        points,
        plan,
        radius=hallucination.radius,
        decoder_config=hallucination.decoder,
        config=filter_config,
    )


def hallucinate_worker(
    item: tuple[int, str, Plan],
    hallucination: HallucinationConfig,
    filter_config: FilterConfig,
    master_seed: int,
    samples_per_hypothesis: int = 1,
) -> tuple[str, FilterReport]:
    index, plan_id, plan = item
    seed = child_seed(master_seed, STAGE_HALLUCINATE, index)
    report = infer_critical_points(
        plan, hallucination, filter_config, seed, samples_per_hypothesis
    )
    return plan_id, report


def generate_worker(
    item: tuple[int, str, Plan, list],
    generator: GeneratorConfig,
    master_seed: int,
    augment: bool = True,
) -> tuple[str, list[Scenario]]:
    index, plan_id, plan, kept = item
    rng = child_rng(master_seed, STAGE_GENERATE, index)
    scenarios = generate_scenarios(plan_id, kept, plan, generator, rng)
    if augment:
        scenarios = [
            augment_random_obstacles(s, plan, generator, rng) for s in scenarios
        ]
    return plan_id, scenarios


def render_worker(
    item: tuple[int, str, Plan, Scenario],
    lidar: LidarConfig,
    master_seed: int,
    scan_history: int = 5,
    action_horizon: int = 5,
) -> list[TrainingRecord]:
    index, plan_id, plan, scenario = item
    rng = None
    if lidar.range_noise_sigma > 0.0:
        rng = child_rng(master_seed, STAGE_RENDER, index)
    return build_records(
        plan,
        scenario,
        m_l=scan_history,
        m_a=action_horizon,
        lidar=lidar,
        rng=rng,
        plan_id=plan_id,
    )


def trial_worker(
    item: tuple[int, WorldSpec],
    planner_factory: Callable[[], Any],
    trial_config: TrialConfig,
    master_seed: int,
) -> TrialResult:
    """Run one trial with a fresh planner instance (planners are stateful)."""
    index, world = item
    planner = planner_factory()
    rng = child_rng(master_seed, STAGE_SIMULATE, index)
    try:
        return run_trial(world, planner, trial_config, rng)
    finally:
        close = getattr(planner, "close", None)
        if callable(close):
            close()


def coverage_samples(plan: Plan, scenario: Scenario) -> list[FeatureSample]:
    """One feature sample per obstacle per timestep of a scenario.

    The robot pose at step t is the plan pose; obstacles follow their
    constant-velocity trajectories. Out-of-range samples are dropped later
    by the binning, not here.
    """
    out = []
    trajectories = scenario.all_trajectories()
    horizon = min(scenario.horizon, len(plan.poses))
    for t in range(1, horizon + 1):
        robot = Pose2(*plan.poses[t - 1])
        for traj in trajectories:
            pos = traj.position_at(t, scenario.dt)
            out.append(features_of(robot, pos, traj.velocity))
    return out


# --- parallel fan-out ------------------------------------------------------------


def parallel_map(
    fn: Callable[[T], U], items: Sequence[T], workers: int = 1
) -> list[U]:
    """Order-stable map, fanning out to processes when workers > 1."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))
