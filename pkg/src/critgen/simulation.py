"""Closed-loop evaluation in procedurally generated dynamic-obstacle worlds.

Worlds follow a three-tier difficulty split (obstacle count and speed
ranges) in a square arena; obstacles move at constant velocity with specular
wall reflection (speed is conserved exactly), with an optional
sinusoidal-heading weave mode. The robot is a unicycle driven by a planner
behind an MPC-style safety override: when the exact lookahead rollout of the
commanded action dips below the safety margin the robot halts for one step,
then backs up until the planner's command clears. A trial ends in success
(goal reached), collision (clearance < 0), or timeout.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DEFAULT_ROBOT_RADIUS,
    LidarConfig,
    Obstacle,
    Pose2,
    normalize_angle,
    raycast,
)
from .planners import PlannerInterface


@dataclass(frozen=True)
class ObstacleSpec:
    position: tuple[float, float]
    velocity: tuple[float, float]
    radius: float = 0.5
    motion: str = "linear"  # "linear" or "weave"
    weave_amplitude: float = 0.0  # radians of heading oscillation
    weave_period: float = 4.0  # seconds

    def __post_init__(self) -> None:
        if self.motion not in ("linear", "weave"):
            raise ValueError("motion must be 'linear' or 'weave'")
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass
class WorldSpec:
    world_id: str
    difficulty: str
    seed: int
    arena: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    start: Pose2
    goal: tuple[float, float]
    obstacles: list[ObstacleSpec]


@dataclass(frozen=True)
class TierSpec:
    name: str
    worlds: int
    obstacle_count: tuple[int, int]  # inclusive
    speed: tuple[float, float]


DEFAULT_TIERS = (
    TierSpec("easy", 20, (5, 10), (0.5, 1.0)),
    TierSpec("medium", 10, (5, 10), (0.5, 1.0)),
    TierSpec("medium", 10, (10, 20), (0.5, 1.0)),
    TierSpec("hard", 20, (10, 20), (1.0, 2.0)),
)


@dataclass(frozen=True)
class WorldGenConfig:
    tiers: tuple[TierSpec, ...] = DEFAULT_TIERS
    arena: tuple[float, float, float, float] = (-5.0, -5.0, 5.0, 5.0)
    start: Pose2 = Pose2(-4.5, 0.0, 0.0)
    goal: tuple[float, float] = (4.5, 0.0)
    obstacle_radius: float = 0.5
    clear_radius: float = 1.0  # keep-out discs around start and goal
    max_place_attempts: int = 1000


class WorldGenerationError(RuntimeError):
    pass


def generate_worlds(
    config: WorldGenConfig, rng: np.random.Generator
) -> list[WorldSpec]:
    """Generate the tiered world set (default: 20 easy / 20 medium / 20 hard).

    Obstacle counts draw uniformly from the tier's inclusive range, speeds
    uniformly from its speed range with a uniform heading; initial positions
    are uniform in the arena outside keep-out discs around start and goal.
    """
    xmin, ymin, xmax, ymax = config.arena
    r = config.obstacle_radius
    if xmax - xmin <= 2 * r or ymax - ymin <= 2 * r:
        raise WorldGenerationError("arena too small for the obstacle radius")
    start_xy = config.start.xy
    goal_xy = np.array(config.goal)
    worlds = []
    index = 0
    for tier in config.tiers:
        for _ in range(tier.worlds):
            count = int(rng.integers(tier.obstacle_count[0], tier.obstacle_count[1] + 1))
            obstacles = []
            for _ in range(count):
                for attempt in range(config.max_place_attempts):
                    pos = np.array(
                        [
                            rng.uniform(xmin + r, xmax - r),
                            rng.uniform(ymin + r, ymax - r),
                        ]
                    )
                    if (
                        np.linalg.norm(pos - start_xy) > config.clear_radius + r
                        and np.linalg.norm(pos - goal_xy) > config.clear_radius + r
                    ):
                        break
                else:
                    raise WorldGenerationError(
                        "could not place an obstacle outside the keep-out discs"
                    )
                speed = rng.uniform(*tier.speed)
                heading = rng.uniform(-math.pi, math.pi)
                obstacles.append(
                    ObstacleSpec(
                        position=(float(pos[0]), float(pos[1])),
                        velocity=(speed * math.cos(heading), speed * math.sin(heading)),
                        radius=r,
                    )
                )
            worlds.append(
                WorldSpec(
                    world_id=f"{tier.name}_{index:03d}",
                    difficulty=tier.name,
                    seed=int(rng.integers(0, 2**31 - 1)),
                    arena=config.arena,
                    start=config.start,
                    goal=config.goal,
                    obstacles=obstacles,
                )
            )
            index += 1
    return worlds


# --- obstacle dynamics ---------------------------------------------------------


@dataclass
class _ObstacleState:
    pos: np.ndarray
    vel: np.ndarray
    radius: float
    motion: str
    base_speed: float
    base_heading: float
    weave_amplitude: float
    weave_period: float


def _init_states(world: WorldSpec) -> list[_ObstacleState]:
    states = []
    for spec in world.obstacles:
        vel = np.array(spec.velocity, dtype=float)
        speed = float(np.linalg.norm(vel))
        heading = math.atan2(vel[1], vel[0]) if speed > 0 else 0.0
        states.append(
            _ObstacleState(
                pos=np.array(spec.position, dtype=float),
                vel=vel.copy(),
                radius=spec.radius,
                motion=spec.motion,
                base_speed=speed,
                base_heading=heading,
                weave_amplitude=spec.weave_amplitude,
                weave_period=spec.weave_period,
            )
        )
    return states


def _copy_states(states: list[_ObstacleState]) -> list[_ObstacleState]:
    return [
        _ObstacleState(
            pos=s.pos.copy(),
            vel=s.vel.copy(),
            radius=s.radius,
            motion=s.motion,
            base_speed=s.base_speed,
            base_heading=s.base_heading,
            weave_amplitude=s.weave_amplitude,
            weave_period=s.weave_period,
        )
        for s in states
    ]


def step_obstacles(
    states: list[_ObstacleState],
    dt: float,
    arena: tuple[float, float, float, float],
    sim_time: float,
) -> None:
    """Advance obstacles in place by one step with specular wall reflection.

    Reflection negates one velocity component at a time (corners compose),
    so speed is conserved exactly. Weave obstacles oscillate their heading
    sinusoidally around the base direction at constant speed.
    """
    xmin, ymin, xmax, ymax = arena
    for s in states:
        if s.motion == "weave" and s.base_speed > 0:
            heading = s.base_heading + s.weave_amplitude * math.sin(
                2.0 * math.pi * sim_time / s.weave_period
            )
            s.vel = s.base_speed * np.array([math.cos(heading), math.sin(heading)])
        s.pos += s.vel * dt
        lo_x, hi_x = xmin + s.radius, xmax - s.radius
        lo_y, hi_y = ymin + s.radius, ymax - s.radius
        for _ in range(8):  # corners may need more than one fold
            moved = False
            if s.pos[0] < lo_x:
                s.pos[0] = 2 * lo_x - s.pos[0]
                s.vel[0] = -s.vel[0]
                s.base_heading = math.atan2(s.vel[1], s.vel[0])
                moved = True
            elif s.pos[0] > hi_x:
                s.pos[0] = 2 * hi_x - s.pos[0]
                s.vel[0] = -s.vel[0]
                s.base_heading = math.atan2(s.vel[1], s.vel[0])
                moved = True
            if s.pos[1] < lo_y:
                s.pos[1] = 2 * lo_y - s.pos[1]
                s.vel[1] = -s.vel[1]
                s.base_heading = math.atan2(s.vel[1], s.vel[0])
                moved = True
            elif s.pos[1] > hi_y:
                s.pos[1] = 2 * hi_y - s.pos[1]
                s.vel[1] = -s.vel[1]
                s.base_heading = math.atan2(s.vel[1], s.vel[0])
                moved = True
            if not moved:
                break


# --- trial ----------------------------------------------------------------------


@dataclass(frozen=True)
class TrialConfig:
    dt: float = 0.1
    max_time: float = 120.0
    goal_tolerance: float = 0.5
    robot_radius: float = DEFAULT_ROBOT_RADIUS
    max_speed: float = 1.5
    max_turn: float = 2.0
    lookahead_distance: float = 2.25
    safety_lookahead: float = 0.5
    safety_margin: float = 0.1
    reverse_speed: float = 0.3
    m_l: int = 5
    m_a: int = 5
    lidar: LidarConfig = field(default_factory=LidarConfig)
    planner_deadline_s: float = 10.0
    safety_enabled: bool = True


@dataclass
class TrialResult:
    outcome: str  # "success" | "collision" | "timeout"
    elapsed: float  # simulated seconds
    min_clearance_seen: float
    path_length: float
    world_id: str = ""
    difficulty: str = ""
    diagnostic: str = ""


def goal_lookahead(
    global_path: np.ndarray, robot: Pose2, distance: float = 2.25
) -> np.ndarray:
    """Unit vector (world frame) from the robot toward a point ``distance``
    ahead of its projection onto the global path polyline.

    Walking past the path end targets the final vertex. Returns the zero
    vector when the robot already sits on the target.
    """
    path = np.asarray(global_path, dtype=float)
    if path.ndim != 2 or path.shape[1] != 2 or len(path) < 2:
        raise ValueError("global path must be an (M, 2) polyline")
    p = robot.xy
    seg = np.diff(path, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    best = (math.inf, 0, 0.0)  # (distance to path, segment index, s along segment)
    for i in range(len(seg)):
        if seg_len[i] < 1e-12:
            s = 0.0
        else:
            s = float(np.clip(np.dot(p - path[i], seg[i]) / seg_len[i] ** 2, 0.0, 1.0))
        proj = path[i] + s * seg[i]
        d = float(np.linalg.norm(p - proj))
        if d < best[0]:
            best = (d, i, s)
    _, i, s = best
    remaining = distance
    cursor = path[i] + s * seg[i]
    arc_left = (1.0 - s) * seg_len[i]
    while remaining > arc_left:
        remaining -= arc_left
        i += 1
        if i >= len(seg):
            cursor = path[-1]
            remaining = 0.0
            arc_left = 0.0
            break
        cursor = path[i]
        arc_left = seg_len[i]
    if arc_left > 0.0 and remaining > 0.0:
        cursor = cursor + seg[i] * (remaining / seg_len[i])
    vec = cursor - p
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        return np.zeros(2)
    return vec / norm


def _integrate_unicycle(pose: Pose2, v: float, omega: float, dt: float) -> Pose2:
    return Pose2(
        pose.x + v * math.cos(pose.heading) * dt,
        pose.y + v * math.sin(pose.heading) * dt,
        normalize_angle(pose.heading + omega * dt),
    )


def _clearance(pose: Pose2, states: list[_ObstacleState], robot_radius: float) -> float:
    if not states:
        return math.inf
    best = math.inf
    for s in states:
        d = math.hypot(pose.x - s.pos[0], pose.y - s.pos[1]) - s.radius - robot_radius
        best = min(best, d)
    return best


def _rollout_clearance(
    pose: Pose2,
    action: tuple[float, float],
    states: list[_ObstacleState],
    cfg: TrialConfig,
    arena: tuple[float, float, float, float],
    sim_time: float,
) -> float:
    """Exact min clearance over the safety lookahead under a constant action."""
    steps = max(int(math.ceil(cfg.safety_lookahead / cfg.dt)), 1)
    sim = _copy_states(states)
    p = pose
    worst = _clearance(p, sim, cfg.robot_radius)
    t = sim_time
    for _ in range(steps):
        p = _integrate_unicycle(p, action[0], action[1], cfg.dt)
        step_obstacles(sim, cfg.dt, arena, t)
        t += cfg.dt
        worst = min(worst, _clearance(p, sim, cfg.robot_radius))
    return worst


def run_trial(
    world: WorldSpec,
    planner: PlannerInterface,
    cfg: TrialConfig = TrialConfig(),
    rng: np.random.Generator | None = None,
) -> TrialResult:
    """Run one closed-loop trial of a planner in a world.

    Deterministic given the world, planner, and config (scan noise, if
    enabled, consumes the rng). The safety override halts for one step when
    the exact lookahead of the commanded action drops below the margin, then
    reverses until the command clears; reversing is skipped when it predicts
    worse clearance than standing still.
    """
    states = _init_states(world)
    robot = world.start
    goal = np.array(world.goal, dtype=float)
    path = np.stack([world.start.xy, goal])
    scans = np.full((cfg.m_l, cfg.lidar.beams), cfg.lidar.max_range)
    past_actions = np.zeros((cfg.m_l, 2))
    min_seen = math.inf
    path_length = 0.0
    mode = "normal"
    steps = int(math.ceil(cfg.max_time / cfg.dt))
    outcome, diagnostic = "timeout", ""
    elapsed = cfg.max_time
    for k in range(steps):
        clearance = _clearance(robot, states, cfg.robot_radius)
        min_seen = min(min_seen, clearance)
        if clearance < 0.0:
            outcome, elapsed = "collision", k * cfg.dt
            break
        if float(np.linalg.norm(robot.xy - goal)) <= cfg.goal_tolerance:
            outcome, elapsed = "success", k * cfg.dt
            break
        obstacles = [Obstacle((s.pos[0], s.pos[1]), s.radius) for s in states]
        scan = raycast(robot, obstacles, cfg.lidar)
        if cfg.lidar.range_noise_sigma > 0.0 and rng is not None:
            scan = np.clip(
                scan + rng.normal(0.0, cfg.lidar.range_noise_sigma, scan.shape),
                1e-9,
                cfg.lidar.max_range,
            )
        scans = np.roll(scans, -1, axis=0)
        scans[-1] = scan
        look = goal_lookahead(path, robot, cfg.lookahead_distance)
        c, s_ = math.cos(-robot.heading), math.sin(-robot.heading)
        goal_rf = np.array([c * look[0] - s_ * look[1], s_ * look[0] + c * look[1]])
        t0 = time.perf_counter()
        actions = np.asarray(planner.plan(scans, past_actions, goal_rf), dtype=float)
        if time.perf_counter() - t0 > cfg.planner_deadline_s:
            outcome, elapsed = "timeout", k * cfg.dt
            diagnostic = "planner deadline exceeded"
            break
        if actions.shape != (cfg.m_a, 2):
            raise ValueError(
                f"planner must return exactly {cfg.m_a} actions, got {actions.shape}"
            )
        v = float(np.clip(actions[0, 0], -cfg.max_speed, cfg.max_speed))
        omega = float(np.clip(actions[0, 1], -cfg.max_turn, cfg.max_turn))
        command = (v, omega)
        if cfg.safety_enabled:
            t_now = k * cfg.dt
            if (
                _rollout_clearance(robot, command, states, cfg, world.arena, t_now)
                >= cfg.safety_margin
            ):
                mode = "normal"
            elif mode == "normal":
                command = (0.0, 0.0)
                mode = "halted"
            else:
                mode = "reversing"
                reverse = (-cfg.reverse_speed, 0.0)
                hold = (0.0, 0.0)
                rev_c = _rollout_clearance(robot, reverse, states, cfg, world.arena, t_now)
                hold_c = _rollout_clearance(robot, hold, states, cfg, world.arena, t_now)
                command = reverse if rev_c >= hold_c else hold
        new_robot = _integrate_unicycle(robot, command[0], command[1], cfg.dt)
        path_length += math.hypot(new_robot.x - robot.x, new_robot.y - robot.y)
        robot = new_robot
        step_obstacles(states, cfg.dt, world.arena, k * cfg.dt)
        past_actions = np.roll(past_actions, -1, axis=0)
        past_actions[-1] = command
    if min_seen == math.inf:
        min_seen = cfg.lidar.max_range
    return TrialResult(
        outcome=outcome,
        elapsed=elapsed,
        min_clearance_seen=float(min_seen),
        path_length=path_length,
        world_id=world.world_id,
        difficulty=world.difficulty,
        diagnostic=diagnostic,
    )


@dataclass
class SuccessRateSummary:
    successes: int
    total: int
    rate: float
    by_difficulty: dict[str, tuple[int, int, float]]

    def format_lines(self) -> list[str]:
        lines = [
            f"overall: {self.successes}/{self.total} = {format_percent(self.successes, self.total)}"
        ]
        for name in sorted(self.by_difficulty):
            s, t, _ = self.by_difficulty[name]
            lines.append(f"{name}: {s}/{t} = {format_percent(s, t)}")
        return lines


def format_percent(successes: int, total: int) -> str:
    if total == 0:
        return "n/a"
    return f"{100.0 * successes / total:.2f}%"


def success_rate(results: list[TrialResult]) -> SuccessRateSummary:
    """Overall and per-difficulty success fractions."""
    total = len(results)
    successes = sum(1 for r in results if r.outcome == "success")
    by: dict[str, tuple[int, int, float]] = {}
    for r in results:
        key = r.difficulty or "all"
        s, t, _ = by.get(key, (0, 0, 0.0))
        s += 1 if r.outcome == "success" else 0
        t += 1
        by[key] = (s, t, s / t)
    return SuccessRateSummary(
        successes=successes,
        total=total,
        rate=successes / total if total else 0.0,
        by_difficulty=by,
    )
