"""LiDAR rendering of scenarios into anchored training records."""

import math

import numpy as np
import pytest

from conftest import line_plan, plant_plan
from critgen.generation import ObstacleTrajectory, Scenario
from critgen.geometry import LidarConfig, Obstacle, Plan, Pose2, normalize_angles, raycast
from critgen.rendering import build_records, render_scan

_LIDAR = LidarConfig(beams=72)


def _static_scenario(center, radius=0.5, horizon=20, dt=0.1, plan_id="p"):
    traj = ObstacleTrajectory(center, (0.0, 0.0), t_crit=1, radius=radius)
    return Scenario(plan_id, [traj], [], horizon=horizon, dt=dt)


def _forward_beam(lidar: LidarConfig) -> int:
    return int(np.argmin(np.abs(lidar.offsets())))


def test_empty_scenario_reads_max_range():
    empty = Scenario("p", [], [], horizon=10, dt=0.1)
    ranges = render_scan(Pose2(0.0, 0.0, 0.0), empty, 1, _LIDAR)
    np.testing.assert_array_equal(ranges, np.full(72, _LIDAR.max_range))


def test_obstacle_dead_ahead():
    scenario = _static_scenario((2.0, 0.0), radius=0.5)
    ranges = render_scan(Pose2(0.0, 0.0, 0.0), scenario, 5, _LIDAR)
    assert ranges[_forward_beam(_LIDAR)] == pytest.approx(1.5, abs=1e-12)


def test_moving_obstacle_matches_reraycast_oracle():
    traj = ObstacleTrajectory((2.0, 1.0), (0.8, -0.4), t_crit=4, radius=0.5)
    scenario = Scenario("p", [traj], [], horizon=12, dt=0.1)
    robot = Pose2(0.3, -0.2, 0.4)
    for t in (1, 4, 9):
        got = render_scan(robot, scenario, t, _LIDAR)
        oracle = raycast(
            robot, [Obstacle(tuple(traj.position_at(t, 0.1)), 0.5)], _LIDAR
        )
        np.testing.assert_array_equal(got, oracle)
    # Consecutive timesteps see the moved circle, not the anchored one.
    assert not np.array_equal(
        render_scan(robot, scenario, 4, _LIDAR), render_scan(robot, scenario, 5, _LIDAR)
    )


def test_render_scan_rejects_bad_timestep():
    with pytest.raises(ValueError):
        render_scan(Pose2(0, 0, 0), _static_scenario((2.0, 0.0)), 0, _LIDAR)


def test_range_noise_needs_rng_and_clamps():
    scenario = _static_scenario((0.5, 0.0), radius=0.4)
    noisy = LidarConfig(beams=72, range_noise_sigma=3.0)
    with pytest.raises(ValueError):
        render_scan(Pose2(0, 0, 0), scenario, 1, noisy)
    rng = np.random.default_rng(0)
    for _ in range(20):
        ranges = render_scan(Pose2(0, 0, 0), scenario, 1, noisy, rng)
        assert np.all(ranges > 0.0)
        assert np.all(ranges <= noisy.max_range)


def test_record_counts_both_padding_modes():
    horizon, m_l, m_a = 20, 5, 5
    plan = line_plan(horizon, 0.1, (1.9, 0.0))
    scenario = Scenario("p", [], [], horizon=horizon, dt=0.1)
    padded = build_records(plan, scenario, m_l, m_a, _LIDAR, pad_start=True)
    flush = build_records(plan, scenario, m_l, m_a, _LIDAR, pad_start=False)
    assert len(padded) == horizon - m_a - 1
    assert len(flush) == horizon - (m_l + m_a) + 1
    assert [r.step_index for r in padded] == list(range(1, horizon - m_a))
    assert [r.step_index for r in flush] == list(range(m_l - 1, horizon - m_a))


def test_minimum_horizon_yields_single_record_without_padding():
    plan = line_plan(10, 0.1, (0.9, 0.0))
    scenario = Scenario("p", [], [], horizon=10, dt=0.1)
    records = build_records(plan, scenario, 5, 5, _LIDAR, pad_start=False)
    assert len(records) == 1
    assert records[0].step_index == 4


def test_short_plan_yields_no_records():
    plan = line_plan(9, 0.1, (0.8, 0.0))
    scenario = Scenario("p", [], [], horizon=9, dt=0.1)
    assert build_records(plan, scenario, 5, 5, _LIDAR) == []


def test_first_record_past_actions_zero_padded():
    plan = line_plan(20, 0.1, (1.9, 0.0))
    scenario = Scenario("p", [], [], horizon=20, dt=0.1)
    first = build_records(plan, scenario, 5, 5, _LIDAR)[0]
    assert first.step_index == 1
    np.testing.assert_array_equal(first.past_actions[: 5 - 1], np.zeros((4, 2)))
    np.testing.assert_array_equal(first.past_actions[-1], plan.actions[0])


def test_record_windows_and_shapes():
    m_l, m_a = 4, 3
    plan = plant_plan((1.6, 0.2), 24)
    scenario = _static_scenario((1.6, 0.2), horizon=plan.horizon, plan_id="zz")
    records = build_records(plan, scenario, m_l, m_a, _LIDAR, plan_id="override")
    for rec in records:
        assert rec.plan_id == "override"
        assert rec.scans.shape == (m_l, _LIDAR.beams)
        assert rec.past_actions.shape == (m_l, 2)
        assert rec.future_actions.shape == (m_a, 2)
        i = rec.step_index
        np.testing.assert_array_equal(
            rec.future_actions, plan.actions[i : i + m_a]
        )
        if i >= m_l:
            np.testing.assert_array_equal(
                rec.past_actions, plan.actions[i - m_l : i]
            )
        assert np.linalg.norm(rec.goal_unit) == pytest.approx(1.0, abs=1e-12)


def test_goal_unit_at_penultimate_anchor_points_along_final_segment():
    plan = plant_plan((1.6, 0.2), 24)
    scenario = Scenario("p", [], [], horizon=plan.horizon, dt=plan.dt)
    records = build_records(plan, scenario, 5, 1, _LIDAR)
    last = records[-1]
    assert last.step_index == plan.horizon - 2
    seg = plan.positions[-1] - plan.positions[-2]
    h = plan.poses[-2, 2]
    c, s = math.cos(-h), math.sin(-h)
    seg_anchor = np.array([c * seg[0] - s * seg[1], s * seg[0] + c * seg[1]])
    seg_anchor /= np.linalg.norm(seg_anchor)
    assert float(np.dot(last.goal_unit, seg_anchor)) >= 0.999


def test_goal_unit_zero_when_anchor_sits_on_goal():
    # An out-and-back window puts one interior anchor exactly on the final
    # position; its goal vector is the zero vector by contract.
    horizon, dt = 12, 0.1
    x = np.array([0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 0.8, 0.6, 0.4, 0.2, 0.1, 0.4])
    poses = np.stack([x, np.zeros(horizon), np.zeros(horizon)], axis=1)
    actions = np.stack([np.diff(x) / dt, np.zeros(horizon - 1)], axis=1)
    plan = Plan(poses=poses, actions=actions, dt=dt)
    scenario = Scenario("p", [], [], horizon=horizon, dt=dt)
    records = build_records(plan, scenario, 3, 2, _LIDAR)
    on_goal = [r for r in records if abs(plan.positions[r.step_index, 0] - 0.4) < 1e-12]
    assert on_goal
    for rec in on_goal:
        np.testing.assert_array_equal(rec.goal_unit, np.zeros(2))


def test_records_frame_invariant_under_rigid_motion():
    plan = plant_plan((1.6, 0.2), 24)
    traj = ObstacleTrajectory((1.6, 0.2), (0.5, -0.3), t_crit=24, radius=0.5)
    scenario = Scenario("p", [traj], [], horizon=plan.horizon, dt=plan.dt)

    phi, shift = 2.1, np.array([3.5, -1.2])
    c, s = math.cos(phi), math.sin(phi)
    rot = np.array([[c, -s], [s, c]])
    poses = plan.poses.copy()
    poses[:, :2] = plan.positions @ rot.T + shift
    poses[:, 2] = normalize_angles(plan.poses[:, 2] + phi)
    moved_plan = Plan(poses=poses, actions=plan.actions.copy(), dt=plan.dt)
    moved_traj = ObstacleTrajectory(
        tuple(rot @ np.array(traj.anchor) + shift),
        tuple(rot @ np.array(traj.velocity)),
        t_crit=traj.t_crit,
        radius=traj.radius,
    )
    moved_scenario = Scenario(
        "p", [moved_traj], [], horizon=plan.horizon, dt=plan.dt
    )

    base = build_records(plan, scenario, 5, 5, _LIDAR)
    moved = build_records(moved_plan, moved_scenario, 5, 5, _LIDAR)
    assert len(base) == len(moved)
    for a, b in zip(base, moved):
        assert a.step_index == b.step_index
        np.testing.assert_allclose(a.scans, b.scans, atol=1e-9)
        np.testing.assert_array_equal(a.past_actions, b.past_actions)
        np.testing.assert_array_equal(a.future_actions, b.future_actions)
        np.testing.assert_allclose(a.goal_unit, b.goal_unit, atol=1e-9)


def test_ego_motion_compensation_flag():
    plan = plant_plan((1.6, 0.2), 24)  # curved, so headings vary
    scenario = _static_scenario((1.6, 0.2), horizon=plan.horizon)
    compensated = build_records(plan, scenario, 5, 5, _LIDAR)
    native = build_records(plan, scenario, 5, 5, _LIDAR, compensate_ego_motion=False)
    diffs = 0
    for a, b in zip(compensated, native):
        # The current scan renders from the anchor pose either way.
        np.testing.assert_array_equal(a.scans[-1], b.scans[-1])
        if not np.array_equal(a.scans[:-1], b.scans[:-1]):
            diffs += 1
    assert diffs > 0


def test_all_stored_ranges_in_bounds():
    plan = plant_plan((1.6, 0.2), 24)
    traj = ObstacleTrajectory((1.6, 0.2), (1.0, 0.5), t_crit=24, radius=0.5)
    scenario = Scenario("p", [traj], [], horizon=plan.horizon, dt=plan.dt)
    noisy = LidarConfig(beams=72, range_noise_sigma=0.5)
    records = build_records(
        plan, scenario, 5, 5, noisy, rng=np.random.default_rng(2)
    )
    assert records
    for rec in records:
        assert np.all(rec.scans > 0.0)
        assert np.all(rec.scans <= noisy.max_range)


def test_build_records_validates_window_sizes():
    plan = line_plan(20, 0.1, (1.9, 0.0))
    scenario = Scenario("p", [], [], horizon=20, dt=0.1)
    with pytest.raises(ValueError):
        build_records(plan, scenario, 0, 5, _LIDAR)
    with pytest.raises(ValueError):
        build_records(plan, scenario, 5, 0, _LIDAR)
