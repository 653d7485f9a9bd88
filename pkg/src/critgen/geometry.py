"""2D kinematic primitives: poses, plans, circular obstacles, clearance, LiDAR.

Everything downstream (decoding, hallucination, rendering, simulation) works in
the plane with discrete-time plans sampled at a fixed step. Timesteps are
1-based in contracts (t in {1..H}); array storage is 0-based, so timestep t
maps to row t-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Default window step: a 5 s window of 233 poses has 232 steps.
DEFAULT_DT = 5.0 / 232.0
DEFAULT_HORIZON = 233
DEFAULT_ROBOT_RADIUS = 0.2


def normalize_angle(angle: float) -> float:
    """Wrap an angle onto the canonical branch [-pi, pi).

    Idempotent, and raises ValueError for non-finite input.
    """
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle!r}")
    wrapped = (angle + math.pi) % TWO_PI - math.pi
    # Float rounding in the modulo can land exactly on +pi; fold it back.
    if wrapped >= math.pi:
        wrapped = -math.pi
    return wrapped


def normalize_angles(angles: np.ndarray) -> np.ndarray:
    """Vectorized :func:`normalize_angle`."""
    a = np.asarray(angles, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("angles must be finite")
    wrapped = (a + math.pi) % TWO_PI - math.pi
    return np.where(wrapped >= math.pi, -math.pi, wrapped)


@dataclass(frozen=True)
class Pose2:
    """SE(2) pose. The heading is normalized to [-pi, pi) on construction."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("pose coordinates must be finite")
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Action:
    """Unicycle command: linear velocity v and angular velocity omega."""

    v: float
    omega: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.v) and math.isfinite(self.omega)):
            raise ValueError("action components must be finite")


@dataclass(frozen=True)
class Obstacle:
    """Static circular obstacle."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self) -> None:
        cx, cy = (float(self.center[0]), float(self.center[1]))
        if not (math.isfinite(cx) and math.isfinite(cy)):
            raise ValueError("obstacle center must be finite")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError("obstacle radius must be positive")
        object.__setattr__(self, "center", (cx, cy))


@dataclass
class Plan:
    """A fixed-rate motion plan window.

    Parameters
    ----------
    poses : (H, 3) array
        Rows of [x, y, heading]. Recorded windows are re-anchored so the
        first pose sits at the origin of the window frame.
    actions : (H-1, 2) array
        Rows of [v, omega]; action k carries the robot from pose k to k+1.
    dt : float
        Time between consecutive poses, seconds.
    """

    poses: np.ndarray
    actions: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        self.poses = np.asarray(self.poses, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        if self.poses.ndim != 2 or self.poses.shape[1] != 3 or len(self.poses) < 2:
            raise ValueError("poses must be an (H, 3) array with H >= 2")
        if self.actions.shape != (len(self.poses) - 1, 2):
            raise ValueError("actions must be an (H-1, 2) array")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive")
        if not (np.all(np.isfinite(self.poses)) and np.all(np.isfinite(self.actions))):
            raise ValueError("plan entries must be finite")

    @property
    def horizon(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        """(H, 2) view of waypoint positions."""
        return self.poses[:, :2]

    @property
    def goal(self) -> Pose2:
        return Pose2(*self.poses[-1])

    def pose(self, index: int) -> Pose2:
        return Pose2(*self.poses[index])

    def action(self, index: int) -> Action:
        return Action(*self.actions[index])

    def starts_at_origin(self, tol: float = 1e-9) -> bool:
        return bool(abs(self.poses[0, 0]) <= tol and abs(self.poses[0, 1]) <= tol)


def min_clearance(
    plan: Plan, traj_pos: np.ndarray, radius: float, robot_radius: float
) -> float:
    """Signed clearance between a plan and a time-indexed obstacle track.

    Parameters
    ----------
    traj_pos : (H, 2) array
        Obstacle center at every plan timestep (row t-1 holds timestep t).
    radius, robot_radius : float
        Disc radii subtracted from the center distance.

    Returns
    -------
    float
        min over t of (||p_t - c_t|| - radius - robot_radius); negative
        values mean the discs overlap at some timestep.
    """
    traj = np.asarray(traj_pos, dtype=float)
    if traj.shape != (plan.horizon, 2):
        raise ValueError(
            f"trajectory must provide one position per plan timestep, "
            f"expected {(plan.horizon, 2)}, got {traj.shape}"
        )
    dists = np.linalg.norm(plan.positions - traj, axis=1)
    return float(np.min(dists) - radius - robot_radius)


@dataclass(frozen=True)
class LidarConfig:
    """Planar range sensor model.

    Beams are ordered by increasing angular offset from the robot heading.
    A full-circle fov spaces beams at -pi + k * 2pi / beams (no duplicate
    endpoint); a partial fov spreads them inclusively over [-fov/2, fov/2],
    and a single beam always points straight ahead.
    """

    beams: int = 360
    fov: float = TWO_PI
    max_range: float = 10.0
    range_noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.beams < 1:
            raise ValueError("beams must be >= 1")
        if not (math.isfinite(self.fov) and self.fov > 0):
            raise ValueError("fov must be positive")
        if not (math.isfinite(self.max_range) and self.max_range > 0):
            raise ValueError("max_range must be positive")
        if self.range_noise_sigma < 0:
            raise ValueError("range_noise_sigma must be >= 0")

    def offsets(self) -> np.ndarray:
        """Beam angle offsets relative to the robot heading."""
        if self.beams == 1:
            return np.zeros(1)
        if self.fov >= TWO_PI - 1e-12:
            return -math.pi + TWO_PI * np.arange(self.beams) / self.beams
        return np.linspace(-self.fov / 2.0, self.fov / 2.0, self.beams)


def raycast(
    origin: Pose2, obstacles: Sequence[Obstacle], config: LidarConfig
) -> np.ndarray:
    """Cast one ray per beam against circular obstacles.

    Uses the closed-form quadratic for ray-circle intersection. Tangent rays
    count as hits, an obstacle containing the origin reads as range zero, and
    misses clamp to ``config.max_range``.

    Returns
    -------
    (beams,) array of ranges in (0, max_range] (0 only when the origin sits
    inside an obstacle).
    """
    angles = origin.heading + config.offsets()
    if not obstacles:
        return np.full(config.beams, config.max_range)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (B, 2)
    centers = np.array([ob.center for ob in obstacles], dtype=float)  # (N, 2)
    radii = np.array([ob.radius for ob in obstacles], dtype=float)  # (N,)
    rel = origin.xy[None, :] - centers  # (N, 2)
    # Unit beam directions give A = 1 in A t^2 + B t + C = 0.
    b = 2.0 * dirs @ rel.T  # (B, N)
    c = np.sum(rel * rel, axis=1) - radii**2  # (N,)
    disc = b * b - 4.0 * c[None, :]
    hit_mask = disc >= 0.0
    sqrt_disc = np.sqrt(np.where(hit_mask, disc, 0.0))
    t_near = (-b - sqrt_disc) / 2.0
    t_hit = np.where(hit_mask & (t_near >= 0.0), t_near, np.inf)
    # Origin strictly inside a circle: every beam through it reads zero.
    t_hit = np.where(c[None, :] < 0.0, 0.0, t_hit)
    return np.minimum(t_hit.min(axis=1), config.max_range)
