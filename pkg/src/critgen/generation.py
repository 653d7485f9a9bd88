"""Constant-velocity obstacle trajectories through critical points.

Each kept critical point seeds rejection sampling over speed (uniform in
``speed_bounds``) and heading (uniform over the circle): the obstacle passes
through the point exactly at its critical timestep, and a draw is accepted
only if the swept trajectory stays collision-free against the recorded plan
over the whole window. Scenarios bundle one trajectory per kept point and
can be augmented with extra random obstacles that also respect the plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import DEFAULT_ROBOT_RADIUS, Plan, min_clearance
from .hallucination import CriticalPoint


@dataclass(frozen=True)
class ObstacleTrajectory:
    """Constant-velocity disc: position(t) = anchor + velocity * (t - t_crit) * dt.

    ``t_crit`` is 1-based, so position(t_crit) equals the anchor exactly.
    """

    anchor: tuple[float, float]
    velocity: tuple[float, float]
    t_crit: int
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "anchor", (float(self.anchor[0]), float(self.anchor[1]))
        )
        object.__setattr__(
            self, "velocity", (float(self.velocity[0]), float(self.velocity[1]))
        )
        if self.t_crit < 1:
            raise ValueError("t_crit must be a 1-based timestep")
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)

    def position_at(self, t: int, dt: float) -> np.ndarray:
        return np.array(self.anchor) + (t - self.t_crit) * dt * np.array(self.velocity)

    def positions(self, horizon: int, dt: float) -> np.ndarray:
        """(H, 2) positions for timesteps 1..horizon."""
        ts = (np.arange(1, horizon + 1) - self.t_crit) * dt
        return np.array(self.anchor) + ts[:, None] * np.array(self.velocity)


@dataclass(frozen=True)
class GeneratorConfig:
    speed_bounds: tuple[float, float] = (1.0, 2.0)
    scenarios_per_plan: int = 50
    max_attempts: int = 100
    robot_radius: float = DEFAULT_ROBOT_RADIUS
    obstacle_radius: float = 0.5
    max_random_obstacles: int = 20
    open_space_speed: float = 0.9
    open_space_cos: float = 0.9
    open_space_fraction: float = 0.9

    def __post_init__(self) -> None:
        lo, hi = self.speed_bounds
        if not 0 <= lo <= hi:
            raise ValueError("speed_bounds must satisfy 0 <= lo <= hi")
        if self.scenarios_per_plan < 0:
            raise ValueError("scenarios_per_plan must be >= 0")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.max_random_obstacles < 0:
            raise ValueError("max_random_obstacles must be >= 0")
        if not self.obstacle_radius > 0:
            raise ValueError("obstacle_radius must be positive")


@dataclass
class Scenario:
    """One synthesized obstacle world for a plan window."""

    plan_id: str
    trajectories: list[ObstacleTrajectory]
    augmented: list[ObstacleTrajectory]
    horizon: int
    dt: float

    def all_trajectories(self) -> list[ObstacleTrajectory]:
        return self.trajectories + self.augmented


class TrajectorySamplingError(RuntimeError):
    """Raised when no collision-free draw exists for a critical point."""

    def __init__(self, point: CriticalPoint, attempts: int):
        super().__init__(
            f"no collision-free trajectory through ({point.x:.3f}, {point.y:.3f}) "
            f"at t={point.t_crit} after {attempts} attempts"
        )
        self.point = point
        self.attempts = attempts


def _draw(
    anchor: tuple[float, float],
    t_crit: int,
    config: GeneratorConfig,
    rng: np.random.Generator,
) -> ObstacleTrajectory:
    speed = rng.uniform(*config.speed_bounds)
    heading = rng.uniform(-math.pi, math.pi)
    return ObstacleTrajectory(
        anchor=anchor,
        velocity=(speed * math.cos(heading), speed * math.sin(heading)),
        t_crit=t_crit,
        radius=config.obstacle_radius,
    )


def sample_trajectory(
    point: CriticalPoint,
    plan: Plan,
    config: GeneratorConfig,
    rng: np.random.Generator,
) -> ObstacleTrajectory:
    """Rejection-sample one collision-free trajectory through a critical point."""
    if not 1 <= point.t_crit <= plan.horizon:
        raise ValueError(
            f"critical timestep {point.t_crit} outside 1..{plan.horizon}"
        )
    for _ in range(config.max_attempts):
        traj = _draw((point.x, point.y), point.t_crit, config, rng)
        clearance = min_clearance(
            plan, traj.positions(plan.horizon, plan.dt), traj.radius, config.robot_radius
        )
        if clearance >= 0.0:
            return traj
    raise TrajectorySamplingError(point, config.max_attempts)


def generate_scenarios(
    plan_id: str,
    kept_points: list[CriticalPoint],
    plan: Plan,
    config: GeneratorConfig,
    rng: np.random.Generator,
) -> list[Scenario]:
    """Sample up to ``scenarios_per_plan`` scenarios, one trajectory per point.

    A scenario in which any point fails to yield a collision-free draw is
    dropped (callers can count drops as scenarios_per_plan - len(result)).
    An empty kept set yields no scenarios.
    """
    if not kept_points:
        return []
    scenarios = []
    for _ in range(config.scenarios_per_plan):
        try:
            trajectories = [
                sample_trajectory(p, plan, config, rng) for p in kept_points
            ]
        except TrajectorySamplingError:
            continue
        scenarios.append(
            Scenario(
                plan_id=plan_id,
                trajectories=trajectories,
                augmented=[],
                horizon=plan.horizon,
                dt=plan.dt,
            )
        )
    return scenarios


def augment_random_obstacles(
    scenario: Scenario,
    plan: Plan,
    config: GeneratorConfig,
    rng: np.random.Generator,
) -> Scenario:
    """Add k ~ Uniform{0..max_random_obstacles} random non-colliding obstacles.

    Anchors are uniform in the plan's bounding box inflated by 2 m, anchor
    timesteps uniform in {1..H}; draws that cannot be made collision-free
    against the plan within ``max_attempts`` are skipped. Augmented obstacles
    are checked against the plan only, not against each other.
    """
    count = int(rng.integers(0, config.max_random_obstacles + 1))
    lo = plan.positions.min(axis=0) - 2.0
    hi = plan.positions.max(axis=0) + 2.0
    added: list[ObstacleTrajectory] = []
    for _ in range(count):
        for _ in range(config.max_attempts):
            anchor = (float(rng.uniform(lo[0], hi[0])), float(rng.uniform(lo[1], hi[1])))
            t_anchor = int(rng.integers(1, plan.horizon + 1))
            traj = _draw(anchor, t_anchor, config, rng)
            clearance = min_clearance(
                plan,
                traj.positions(plan.horizon, plan.dt),
                traj.radius,
                config.robot_radius,
            )
            if clearance >= 0.0:
                added.append(traj)
                break
    return replace(scenario, augmented=scenario.augmented + added)


def plan_step_velocities(plan: Plan) -> np.ndarray:
    """(H-1, 2) instantaneous velocities from waypoint differences."""
    return np.diff(plan.positions, axis=0) / plan.dt


def select_open_space_plans(
    plans: list[Plan], config: GeneratorConfig = GeneratorConfig()
) -> list[Plan]:
    """Keep plans that move fast and straight at the goal.

    A plan qualifies when its mean step speed exceeds ``open_space_speed``
    and the cosine between the instantaneous velocity and the vector to the
    goal is at least ``open_space_cos`` for at least ``open_space_fraction``
    of the steps. Stationary steps (or steps at the goal) count as
    misaligned.
    """
    kept = []
    for plan in plans:
        vel = plan_step_velocities(plan)
        speeds = np.linalg.norm(vel, axis=1)
        if speeds.mean() <= config.open_space_speed:
            continue
        to_goal = plan.positions[-1][None, :] - plan.positions[:-1]
        dist = np.linalg.norm(to_goal, axis=1)
        denom = speeds * dist
        valid = denom > 1e-12
        cosines = np.zeros(len(vel))
        cosines[valid] = np.sum(vel * to_goal, axis=1)[valid] / denom[valid]
        if np.mean(cosines >= config.open_space_cos) >= config.open_space_fraction:
            kept.append(plan)
    return kept
