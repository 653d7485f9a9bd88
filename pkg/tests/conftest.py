"""Shared fixture builders for the test suite."""

import numpy as np

from critgen.decoder import DecoderConfig, MaskedObstacle, TemporalMask, decode
from critgen.geometry import Obstacle, Plan, Pose2


def plant_plan(
    planted: tuple[float, float],
    t_crit: int,
    horizon: int = 48,
    dt: float = 0.1,
    goal: Pose2 = Pose2(3.2, 0.0, 0.0),
    config: DecoderConfig = DecoderConfig(iterations=150),
) -> Plan:
    """Plan that detours around one obstacle present only at ``t_crit``."""
    obstacle = MaskedObstacle(
        Obstacle(planted, 0.5), TemporalMask.one_hot(horizon, t_crit - 1)
    )
    return decode([obstacle], goal, horizon, dt, config).plan


def multi_plant_plan(
    points: list[tuple[float, float, int]],
    horizon: int,
    dt: float,
    goal: Pose2,
    radius: float = 0.5,
    config: DecoderConfig = DecoderConfig(iterations=150),
) -> Plan:
    """Plan detouring around several one-hot obstacles (x, y, t_crit)."""
    obstacles = [
        MaskedObstacle(Obstacle((x, y), radius), TemporalMask.one_hot(horizon, t - 1))
        for x, y, t in points
    ]
    return decode(obstacles, goal, horizon, dt, config).plan


def line_plan(horizon: int, dt: float, goal: tuple[float, float]) -> Plan:
    """Straight constant-speed plan from the origin."""
    ts = np.linspace(0.0, 1.0, horizon)
    pts = ts[:, None] * np.asarray(goal, dtype=float)
    heading = np.arctan2(goal[1], goal[0]) if (goal[0] or goal[1]) else 0.0
    poses = np.concatenate([pts, np.full((horizon, 1), heading)], axis=1)
    speed = np.hypot(goal[0], goal[1]) / ((horizon - 1) * dt)
    actions = np.tile([speed, 0.0], (horizon - 1, 1))
    return Plan(poses=poses, actions=actions, dt=dt)
