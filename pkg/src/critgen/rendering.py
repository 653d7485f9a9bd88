"""LiDAR rendering of scenarios into imitation-learning training records.

A record anchors at one plan pose and bundles the current scan, the
historical scans (obstacles rendered at their past timesteps), the past and
future actions, and a unit goal direction, everything expressed in the
anchor pose's frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import LidarConfig, Obstacle, Plan, Pose2, raycast
from .generation import Scenario

_RANGE_FLOOR = 1e-9


@dataclass
class TrainingRecord:
    """One training example anchored at plan pose ``step_index`` (0-based).

    scans: (m_l, beams) with row -1 the current scan; past_actions and
    future_actions: (m_l, 2) and (m_a, 2); goal_unit: unit vector toward the
    plan's final position in the anchor frame (zero vector when the anchor
    already sits at the goal).
    """

    plan_id: str
    step_index: int
    scans: np.ndarray
    past_actions: np.ndarray
    future_actions: np.ndarray
    goal_unit: np.ndarray


def render_scan(
    robot: Pose2,
    scenario: Scenario,
    t: int,
    lidar: LidarConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Render the scenario's obstacles at timestep ``t`` (1-based) from ``robot``.

    Optional additive Gaussian range noise is clamped to (0, max_range].
    """
    if t < 1:
        raise ValueError("timestep must be >= 1")
    obstacles = [
        Obstacle(tuple(traj.position_at(t, scenario.dt)), traj.radius)
        for traj in scenario.all_trajectories()
    ]
    ranges = raycast(robot, obstacles, lidar)
    if lidar.range_noise_sigma > 0.0:
        if rng is None:
            raise ValueError("range noise requires an rng")
        ranges = np.clip(
            ranges + rng.normal(0.0, lidar.range_noise_sigma, size=ranges.shape),
            _RANGE_FLOOR,
            lidar.max_range,
        )
    return ranges


def _rotate_into(heading: float, vec: np.ndarray) -> np.ndarray:
    c, s = math.cos(-heading), math.sin(-heading)
    return np.array([c * vec[0] - s * vec[1], s * vec[0] + c * vec[1]])


def build_records(
    plan: Plan,
    scenario: Scenario,
    m_l: int = 5,
    m_a: int = 5,
    lidar: LidarConfig = LidarConfig(),
    rng: np.random.Generator | None = None,
    *,
    pad_start: bool = True,
    compensate_ego_motion: bool = True,
    plan_id: str | None = None,
) -> list[TrainingRecord]:
    """Slide an anchor over the plan and emit one record per valid step.

    With ``pad_start`` (the fixed pipeline convention) anchors run over pose
    indices {1 .. H-1-m_a}: historical pose indices clamp to the window start
    and missing past actions zero-pad, so the first record has its first
    m_l - 1 past-action slots zeroed. Without padding anchors start at
    m_l - 1 instead, giving H - (m_l + m_a) + 1 records. Plans shorter than
    m_l + m_a produce no records.

    Historical scans render the obstacle configuration at each past timestep.
    With ``compensate_ego_motion`` (default) they are taken from the
    historical robot positions with beam directions indexed by the anchor
    heading, so beam k points the same world direction in every scan of the
    record; the flagged alternative keeps each scan in its own sensor frame.
    """
    if m_l < 1 or m_a < 1:
        raise ValueError("m_l and m_a must be >= 1")
    horizon = plan.horizon
    if horizon < m_l + m_a:
        return []
    pid = plan_id if plan_id is not None else scenario.plan_id
    first = 1 if pad_start else m_l - 1
    records = []
    for anchor_idx in range(first, horizon - m_a):
        anchor = plan.pose(anchor_idx)
        scans = np.empty((m_l, lidar.beams))
        for slot, pose_idx in enumerate(range(anchor_idx - m_l + 1, anchor_idx + 1)):
            clamped = max(pose_idx, 0)
            hist = plan.pose(clamped)
            origin = Pose2(
                hist.x, hist.y, anchor.heading if compensate_ego_motion else hist.heading
            )
            scans[slot] = render_scan(origin, scenario, clamped + 1, lidar, rng)
        past = np.zeros((m_l, 2))
        for slot, a_idx in enumerate(range(anchor_idx - m_l, anchor_idx)):
            if a_idx >= 0:
                past[slot] = plan.actions[a_idx]
        future = plan.actions[anchor_idx : anchor_idx + m_a].copy()
        goal_vec = plan.positions[-1] - np.array([anchor.x, anchor.y])
        dist = float(np.linalg.norm(goal_vec))
        if dist < 1e-12:
            goal_unit = np.zeros(2)
        else:
            goal_unit = _rotate_into(anchor.heading, goal_vec / dist)
        records.append(
            TrainingRecord(
                plan_id=pid,
                step_index=anchor_idx,
                scans=scans,
                past_actions=past,
                future_actions=future,
                goal_unit=goal_unit,
            )
        )
    return records
