"""Constant-velocity trajectory sampling through critical points."""

import math

import numpy as np
import pytest
from scipy import stats

from conftest import line_plan, plant_plan
from critgen.generation import (
    GeneratorConfig,
    ObstacleTrajectory,
    Scenario,
    TrajectorySamplingError,
    augment_random_obstacles,
    generate_scenarios,
    plan_step_velocities,
    sample_trajectory,
    select_open_space_plans,
)
from critgen.geometry import min_clearance
from critgen.hallucination import CriticalPoint

_CFG = GeneratorConfig()


def _far_point_plan():
    """Short straight plan with a critical point no draw can drag into it.

    Max displacement from the anchor over the window is
    speed_max * dt * max(t_crit - 1, H - t_crit) = 2.0 * 0.1 * 10 = 2 m,
    while the anchor sits 4 m off the plan line, so every draw is accepted
    and rejection cannot bias the speed or heading laws.
    """
    plan = line_plan(20, 0.1, (1.9, 0.0))
    return plan, CriticalPoint(0.5, 4.0, 10)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        ObstacleTrajectory((0.0, 0.0), (1.0, 0.0), t_crit=0, radius=0.5)
    with pytest.raises(ValueError):
        ObstacleTrajectory((0.0, 0.0), (1.0, 0.0), t_crit=3, radius=0.0)


def test_trajectory_kinematics():
    traj = ObstacleTrajectory((1.0, -2.0), (0.4, 0.3), t_crit=7, radius=0.5)
    assert traj.speed == pytest.approx(0.5)
    np.testing.assert_array_equal(traj.position_at(7, 0.1), [1.0, -2.0])
    pos = traj.positions(horizon=12, dt=0.1)
    assert pos.shape == (12, 2)
    np.testing.assert_array_equal(pos[6], [1.0, -2.0])
    steps = np.diff(pos, axis=0)
    np.testing.assert_allclose(steps, np.tile([0.04, 0.03], (11, 1)), atol=1e-12)
    np.testing.assert_allclose(
        traj.position_at(1, 0.1), np.array([1.0, -2.0]) - 0.6 * np.array([0.4, 0.3])
    )


def test_generator_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(speed_bounds=(2.0, 1.0))
    with pytest.raises(ValueError):
        GeneratorConfig(speed_bounds=(-1.0, 1.0))
    with pytest.raises(ValueError):
        GeneratorConfig(scenarios_per_plan=-1)
    with pytest.raises(ValueError):
        GeneratorConfig(max_attempts=0)
    with pytest.raises(ValueError):
        GeneratorConfig(max_random_obstacles=-1)
    with pytest.raises(ValueError):
        GeneratorConfig(obstacle_radius=0.0)


def test_sample_passes_through_point_exactly():
    plan, point = _far_point_plan()
    rng = np.random.default_rng(0)
    for _ in range(50):
        traj = sample_trajectory(point, plan, _CFG, rng)
        hit = traj.position_at(point.t_crit, plan.dt)
        assert np.max(np.abs(hit - [point.x, point.y])) <= 1e-9
        assert 1.0 <= traj.speed <= 2.0
        clear = min_clearance(
            plan, traj.positions(plan.horizon, plan.dt), traj.radius, _CFG.robot_radius
        )
        assert clear >= 0.0


def test_sample_requires_valid_timestep():
    plan, _ = _far_point_plan()
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_trajectory(CriticalPoint(0.5, 4.0, 0), plan, _CFG, rng)
    with pytest.raises(ValueError):
        sample_trajectory(CriticalPoint(0.5, 4.0, 21), plan, _CFG, rng)


def test_point_on_plan_is_infeasible():
    plan = line_plan(20, 0.1, (1.9, 0.0))
    on_plan = CriticalPoint(float(plan.positions[9, 0]), 0.0, 10)
    rng = np.random.default_rng(0)
    with pytest.raises(TrajectorySamplingError) as err:
        sample_trajectory(on_plan, plan, _CFG, rng)
    assert err.value.point == on_plan
    assert err.value.attempts == _CFG.max_attempts


def test_speed_distribution_uniform():
    plan, point = _far_point_plan()
    rng = np.random.default_rng(11)
    speeds = [
        sample_trajectory(point, plan, _CFG, rng).speed for _ in range(10_000)
    ]
    result = stats.kstest(speeds, "uniform", args=(1.0, 1.0))
    assert result.pvalue > 0.01


def test_heading_distribution_uniform_far_from_plan():
    plan, point = _far_point_plan()
    rng = np.random.default_rng(12)
    headings = []
    for _ in range(10_000):
        traj = sample_trajectory(point, plan, _CFG, rng)
        headings.append(math.atan2(traj.velocity[1], traj.velocity[0]))
    result = stats.kstest(
        headings, "uniform", args=(-math.pi, 2.0 * math.pi)
    )
    assert result.pvalue > 0.01


def test_generate_scenarios_counts():
    plan, point = _far_point_plan()
    kept = [point, CriticalPoint(0.9, -4.0, 8), CriticalPoint(1.4, 4.0, 14)]
    rng = np.random.default_rng(3)
    scenarios = generate_scenarios("p0", kept, plan, _CFG, rng)
    assert len(scenarios) == _CFG.scenarios_per_plan == 50
    for s in scenarios:
        assert s.plan_id == "p0"
        assert len(s.trajectories) == 3
        assert s.augmented == []
        assert s.horizon == plan.horizon
    total = sum(len(s.trajectories) for s in scenarios)
    assert total == 150


def test_generate_scenarios_empty_kept():
    plan, _ = _far_point_plan()
    assert generate_scenarios("p0", [], plan, _CFG, np.random.default_rng(0)) == []


def test_generate_scenarios_deterministic():
    plan, point = _far_point_plan()
    kept = [point]
    first = generate_scenarios("p0", kept, plan, _CFG, np.random.default_rng(5))
    second = generate_scenarios("p0", kept, plan, _CFG, np.random.default_rng(5))
    assert len(first) == len(second)
    for a, b in zip(first, second):
        assert a.trajectories == b.trajectories


def test_infeasible_point_drops_every_scenario():
    plan, point = _far_point_plan()
    on_plan = CriticalPoint(float(plan.positions[9, 0]), 0.0, 10)
    cfg = GeneratorConfig(scenarios_per_plan=5, max_attempts=5)
    scenarios = generate_scenarios(
        "p0", [point, on_plan], plan, cfg, np.random.default_rng(0)
    )
    assert scenarios == []


def test_augment_disabled_leaves_scenario_unchanged():
    plan, point = _far_point_plan()
    base = generate_scenarios("p0", [point], plan, _CFG, np.random.default_rng(1))[0]
    cfg = GeneratorConfig(max_random_obstacles=0)
    out = augment_random_obstacles(base, plan, cfg, np.random.default_rng(2))
    assert out.trajectories == base.trajectories
    assert out.augmented == []


def test_augment_respects_count_and_clearance():
    plan, point = _far_point_plan()
    base = generate_scenarios("p0", [point], plan, _CFG, np.random.default_rng(1))[0]
    lo = plan.positions.min(axis=0) - 2.0
    hi = plan.positions.max(axis=0) + 2.0
    rng = np.random.default_rng(9)
    counts = []
    for _ in range(40):
        out = augment_random_obstacles(base, plan, _CFG, rng)
        counts.append(len(out.augmented))
        assert len(out.augmented) <= _CFG.max_random_obstacles == 20
        for traj in out.augmented:
            clear = min_clearance(
                plan,
                traj.positions(plan.horizon, plan.dt),
                traj.radius,
                _CFG.robot_radius,
            )
            assert clear >= 0.0
            assert lo[0] <= traj.anchor[0] <= hi[0]
            assert lo[1] <= traj.anchor[1] <= hi[1]
            assert 1 <= traj.t_crit <= plan.horizon
        # Original trajectories ride along untouched.
        assert out.trajectories == base.trajectories
    assert max(counts) > 10  # Uniform{0..20} hits the upper half.


def test_augment_stacks_on_existing_augmentation():
    plan, point = _far_point_plan()
    base = generate_scenarios("p0", [point], plan, _CFG, np.random.default_rng(1))[0]
    once = augment_random_obstacles(base, plan, _CFG, np.random.default_rng(3))
    twice = augment_random_obstacles(once, plan, _CFG, np.random.default_rng(4))
    assert twice.augmented[: len(once.augmented)] == once.augmented
    assert twice.all_trajectories() == twice.trajectories + twice.augmented


def test_plan_step_velocities():
    plan = line_plan(20, 0.1, (1.9, 0.0))
    vel = plan_step_velocities(plan)
    assert vel.shape == (19, 2)
    np.testing.assert_allclose(vel, np.tile([1.0, 0.0], (19, 1)), atol=1e-12)


def test_open_space_keeps_fast_goal_directed_plan():
    plan = line_plan(30, 0.1, (2.9, 0.0))  # 1.0 m/s straight at the goal
    assert select_open_space_plans([plan]) == [plan]


def test_open_space_rejects_stationary_plan():
    plan = line_plan(30, 0.1, (0.0, 0.0))
    assert select_open_space_plans([plan]) == []


def test_open_space_rejects_slow_plan():
    plan = line_plan(30, 0.1, (2.0, 0.0))  # ~0.69 m/s
    assert select_open_space_plans([plan]) == []


def test_open_space_rejects_out_and_back_plan():
    # Driving away from the window's endpoint for half the steps breaks the
    # alignment fraction even though the speed stays high.
    horizon, dt = 31, 0.1
    x = np.concatenate([np.linspace(0.0, 2.25, 16), np.linspace(2.1, 0.0, 15)])
    poses = np.stack([x, np.zeros(horizon), np.zeros(horizon)], axis=1)
    d = np.diff(x)
    actions = np.stack([np.abs(d) / dt, np.zeros(horizon - 1)], axis=1)
    from critgen.geometry import Plan

    plan = Plan(poses=poses, actions=actions, dt=dt)
    assert np.linalg.norm(plan_step_velocities(plan), axis=1).mean() > 0.9
    assert select_open_space_plans([plan]) == []


def test_open_space_rejects_detour_plan():
    plan = plant_plan((1.6, 0.2), 24)
    # The detour bends away from the goal long enough to fail the 90%
    # alignment fraction at cosine 0.9 (a ~25 degree cone).
    assert select_open_space_plans([plan]) == []


def test_scenario_all_trajectories_order():
    t1 = ObstacleTrajectory((0.0, 4.0), (1.0, 0.0), 3, 0.5)
    t2 = ObstacleTrajectory((1.0, -4.0), (0.0, 1.5), 7, 0.5)
    s = Scenario("p", trajectories=[t1], augmented=[t2], horizon=10, dt=0.1)
    assert s.all_trajectories() == [t1, t2]
