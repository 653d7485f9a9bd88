"""Parameter-free plan decoder: masked obstacles + goal -> locally optimal plan.

The decoder stands in for a well-tuned classical local planner. It minimizes

    J(q) = smoothness_weight * sum_t ||q_{t+1} - 2 q_t + q_{t-1}||^2
         + collision_weight * sum_t sum_i max(0, m_i^t (r_i + clearance) - ||q_t - c_i||)^3

over waypoint positions q_1..q_H with both endpoints pinned (q_1 at the
origin, q_H at the goal position), by projected gradient descent with
backtracking step halving. A temporal mask m_i scales obstacle i's influence
disc per timestep; a zero mask entry removes the obstacle at that step
entirely. The whole routine is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, Obstacle, Plan, normalize_angles

_MAX_HALVINGS = 30
_REL_IMPROVEMENT_TOL = 1e-10
_STEP_GROWTH = 2.0
_STEP_MAX = 100.0


@dataclass(frozen=True)
class TemporalMask:
    """Per-timestep presence weights in [0, 1], one entry per plan timestep."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) < 1:
            raise ValueError("mask must be a non-empty 1-D array")
        if not np.all(np.isfinite(v)):
            raise ValueError("mask entries must be finite")
        if v.min() < -1e-9 or v.max() > 1.0 + 1e-9:
            raise ValueError("mask entries must lie in [0, 1]")
        object.__setattr__(self, "values", np.clip(v, 0.0, 1.0))

    @property
    def horizon(self) -> int:
        return len(self.values)

    @classmethod
    def ones(cls, horizon: int) -> "TemporalMask":
        return cls(np.ones(horizon))

    @classmethod
    def zeros(cls, horizon: int) -> "TemporalMask":
        return cls(np.zeros(horizon))

    @classmethod
    def one_hot(cls, horizon: int, index: int) -> "TemporalMask":
        if not 0 <= index < horizon:
            raise ValueError("one-hot index out of range")
        v = np.zeros(horizon)
        v[index] = 1.0
        return cls(v)


@dataclass(frozen=True)
class MaskedObstacle:
    """A circular obstacle paired with its temporal presence mask."""

    obstacle: Obstacle
    mask: TemporalMask


@dataclass(frozen=True)
class DecoderConfig:
    smoothness_weight: float = 1.0
    collision_weight: float = 100.0
    safety_clearance: float = 0.1
    iterations: int = 300
    initial_step: float = 0.1

    def __post_init__(self) -> None:
        if self.smoothness_weight < 0 or self.collision_weight < 0:
            raise ValueError("weights must be >= 0")
        if self.safety_clearance < 0:
            raise ValueError("safety_clearance must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")


@dataclass
class DecodeResult:
    """Decoded plan plus optimizer diagnostics."""

    plan: Plan
    cost_trace: list[float] = field(default_factory=list)
    final_cost: float = 0.0
    iterations: int = 0
    unreachable_goal: bool = False


def plan_from_positions(positions: np.ndarray, dt: float) -> Plan:
    """Recover headings and (v, omega) actions from a waypoint sequence.

    Heading at each step points along the outgoing segment; the final pose
    inherits the last segment's heading, and zero-length segments inherit
    the previous heading (0 for a fully stationary prefix).
    """
    pts = np.asarray(positions, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("positions must be an (H, 2) array with H >= 2")
    horizon = len(pts)
    deltas = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(deltas, axis=1)
    raw = np.arctan2(deltas[:, 1], deltas[:, 0])
    # Forward-fill bearings over zero-length segments, seeded with 0.
    last_moving = np.where(seg_len > 0.0, np.arange(horizon - 1), -1)
    np.maximum.accumulate(last_moving, out=last_moving)
    seg_heading = np.where(last_moving >= 0, raw[np.maximum(last_moving, 0)], 0.0)
    headings = np.append(seg_heading, seg_heading[-1])
    v = seg_len / dt
    omega = normalize_angles(np.diff(headings)) / dt
    poses = np.concatenate([pts, headings[:, None]], axis=1)
    actions = np.stack([v, omega], axis=1)
    return Plan(poses=poses, actions=actions, dt=dt)


def straight_line_plan(goal: Pose2, horizon: int, dt: float) -> Plan:
    """Linear interpolation from the origin to the goal position.

    Headings point along the segment and the actions are the constant
    (v, 0) realizing it. A goal at the origin yields a stationary plan.
    """
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    if not dt > 0:
        raise ValueError("dt must be positive")
    ts = np.linspace(0.0, 1.0, horizon)
    pts = ts[:, None] * np.array([goal.x, goal.y])
    return plan_from_positions(pts, dt)


def _obstacle_arrays(
    obstacles: list[MaskedObstacle], horizon: int, clearance: float
) -> tuple[np.ndarray, np.ndarray] | None:
    """Pack active obstacles into (centers (N,2), effective radii (H,N)).

    Obstacles whose mask is identically zero are pruned so they cannot
    perturb the arithmetic at all.
    """
    active = []
    for mo in obstacles:
        if mo.mask.horizon != horizon:
            raise ValueError("mask horizon must match the plan horizon")
        if float(np.max(mo.mask.values)) > 0.0:
            active.append(mo)
    if not active:
        return None
    centers = np.array([mo.obstacle.center for mo in active], dtype=float)
    eff = np.stack(
        [mo.mask.values * (mo.obstacle.radius + clearance) for mo in active],
        axis=1,
    )
    return centers, eff


def _cost(
    pts: np.ndarray,
    centers: np.ndarray | None,
    eff: np.ndarray | None,
    w_smooth: float,
    w_coll: float,
) -> float:
    dd = pts[2:] - 2.0 * pts[1:-1] + pts[:-2]
    total = w_smooth * float(np.sum(dd * dd))
    if centers is not None:
        diff = pts[:, None, :] - centers[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
        gap = np.maximum(eff - dist, 0.0)
        total += w_coll * float(np.sum(gap**3))
    return total


def _grad(
    pts: np.ndarray,
    centers: np.ndarray | None,
    eff: np.ndarray | None,
    w_smooth: float,
    w_coll: float,
) -> np.ndarray:
    g = np.zeros_like(pts)
    dd = pts[2:] - 2.0 * pts[1:-1] + pts[:-2]
    g[2:] += 2.0 * w_smooth * dd
    g[1:-1] -= 4.0 * w_smooth * dd
    g[:-2] += 2.0 * w_smooth * dd
    if centers is not None:
        diff = pts[:, None, :] - centers[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
        gap = np.maximum(eff - dist, 0.0)
        coef = -3.0 * w_coll * gap**2 / np.maximum(dist, 1e-12)
        g += np.sum(coef[:, :, None] * diff, axis=1)
    # Projection onto the pinned-endpoint constraint set.
    g[0] = 0.0
    g[-1] = 0.0
    return g


def _endpoint_collision_cost(
    pts: np.ndarray, centers: np.ndarray | None, eff: np.ndarray | None, w_coll: float
) -> float:
    if centers is None:
        return 0.0
    total = 0.0
    for idx in (0, -1):
        d = np.linalg.norm(pts[idx][None, :] - centers, axis=1)
        total += float(np.sum(np.maximum(eff[idx] - d, 0.0) ** 3))
    return w_coll * total


def plan_cost(
    plan: Plan, obstacles: list[MaskedObstacle], config: DecoderConfig = DecoderConfig()
) -> float:
    """Evaluate the decoder objective J on an existing plan's waypoints."""
    arrays = _obstacle_arrays(obstacles, plan.horizon, config.safety_clearance)
    centers, eff = arrays if arrays is not None else (None, None)
    return _cost(
        plan.positions, centers, eff, config.smoothness_weight, config.collision_weight
    )


def descend_positions(
    base_pts: np.ndarray,
    centers: np.ndarray,
    eff: np.ndarray,
    config: DecoderConfig,
) -> tuple[np.ndarray, float, list[float], int]:
    """Array-level core of :func:`decode` (hot path for the fitting stages).

    Runs the projected descent from ``base_pts`` (not modified) against
    packed obstacle arrays and returns (positions, cost, trace, iterations).
    """
    w_s, w_c = config.smoothness_weight, config.collision_weight
    pts = base_pts.copy()
    cost = _cost(pts, centers, eff, w_s, w_c)
    trace = [cost]
    step = config.initial_step
    done = 0
    prev_pts: np.ndarray | None = None
    prev_g: np.ndarray | None = None
    if len(pts) > 2:
        for it in range(config.iterations):
            g = _grad(pts, centers, eff, w_s, w_c)
            if not np.any(g):
                break
            # Barzilai-Borwein guess for the trial step; the smoothness term
            # is badly conditioned and a fixed step crawls. Backtracking
            # below keeps the descent monotone regardless of the guess.
            if prev_g is not None:
                ds = (pts - prev_pts).ravel()
                dg = (g - prev_g).ravel()
                curv = float(ds @ dg)
                if curv > 1e-18:
                    step = min(float(ds @ ds) / curv, _STEP_MAX)
            prev_pts, prev_g = pts, g
            s = step
            cand = None
            cand_cost = None
            for _ in range(_MAX_HALVINGS):
                trial = pts - s * g
                c = _cost(trial, centers, eff, w_s, w_c)
                if c <= cost:
                    cand, cand_cost = trial, c
                    break
                s *= 0.5
            if cand is None:
                break
            improvement = cost - cand_cost
            pts, cost = cand, cand_cost
            trace.append(cost)
            done = it + 1
            step = min(s * _STEP_GROWTH, _STEP_MAX)
            if improvement <= _REL_IMPROVEMENT_TOL * max(abs(cost), 1.0):
                break
    return pts, cost, trace, done


def decode(
    obstacles: list[MaskedObstacle],
    goal: Pose2,
    horizon: int,
    dt: float,
    config: DecoderConfig = DecoderConfig(),
) -> DecodeResult:
    """Decode masked obstacles and a goal into a locally optimal plan.

    Starts from the straight-line plan and performs projected gradient
    descent with backtracking halving (up to 30 halvings per step),
    terminating early when the relative cost improvement drops below 1e-10.
    The cost trace is non-increasing by construction. With no effective
    obstacle the straight-line plan is returned unchanged. If an endpoint is
    pinned inside an obstacle's effective disc the goal is unreachable: the
    best-effort plan is returned with ``unreachable_goal`` set.
    """
    base = straight_line_plan(goal, horizon, dt)
    w_s, w_c = config.smoothness_weight, config.collision_weight
    arrays = _obstacle_arrays(obstacles, horizon, config.safety_clearance)
    if arrays is None:
        cost = _cost(base.positions, None, None, w_s, w_c)
        return DecodeResult(plan=base, cost_trace=[cost], final_cost=cost)
    centers, eff = arrays
    pts, cost, trace, done = descend_positions(base.positions, centers, eff, config)
    unreachable = _endpoint_collision_cost(pts, centers, eff, w_c) > 0.0
    return DecodeResult(
        plan=plan_from_positions(pts, dt),
        cost_trace=trace,
        final_cost=cost,
        iterations=done,
        unreachable_goal=unreachable,
    )


def reconstruction_mse(plan: Plan, other: Plan) -> float:
    """Mean squared error between two plans' (x, y) waypoints."""
    if other.horizon != plan.horizon:
        raise ValueError("plans must share a horizon")
    diff = plan.positions - other.positions
    return float(np.mean(diff * diff))
