"""Decoder: masked-obstacle penalty objective and projected descent."""

import math

import numpy as np
import pytest

from critgen.decoder import (
    DecoderConfig,
    MaskedObstacle,
    TemporalMask,
    decode,
    plan_cost,
    plan_from_positions,
    reconstruction_mse,
    straight_line_plan,
)
from critgen.decoder import _cost, _grad
from critgen.geometry import Obstacle, Plan, Pose2, min_clearance


def _masked(center, radius, mask_values) -> MaskedObstacle:
    return MaskedObstacle(Obstacle(center, radius), TemporalMask(np.asarray(mask_values)))


def test_temporal_mask_constructors():
    assert TemporalMask.ones(4).values.tolist() == [1.0, 1.0, 1.0, 1.0]
    assert TemporalMask.zeros(3).values.tolist() == [0.0, 0.0, 0.0]
    one_hot = TemporalMask.one_hot(5, 2)
    assert one_hot.values.tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]
    assert one_hot.horizon == 5


def test_temporal_mask_validation():
    with pytest.raises(ValueError):
        TemporalMask(np.array([0.5, 1.5]))
    with pytest.raises(ValueError):
        TemporalMask(np.array([-0.2, 0.5]))
    with pytest.raises(ValueError):
        TemporalMask(np.array([np.nan, 0.5]))
    with pytest.raises(ValueError):
        TemporalMask(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        TemporalMask.one_hot(4, 4)
    # Float-noise boundary values clip instead of failing.
    mask = TemporalMask(np.array([-1e-12, 1.0 + 1e-12]))
    assert mask.values.min() == 0.0 and mask.values.max() == 1.0


def test_decoder_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(smoothness_weight=-1.0)
    with pytest.raises(ValueError):
        DecoderConfig(safety_clearance=-0.1)
    with pytest.raises(ValueError):
        DecoderConfig(iterations=-1)
    with pytest.raises(ValueError):
        DecoderConfig(initial_step=0.0)


def test_straight_line_plan_interpolates():
    plan = straight_line_plan(Pose2(1.0, 0.0, 0.0), 5, 0.25)
    np.testing.assert_allclose(plan.positions[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(plan.positions[:, 1], 0.0)
    np.testing.assert_allclose(plan.actions[:, 0], 1.0)
    np.testing.assert_allclose(plan.actions[:, 1], 0.0)


def test_straight_line_plan_vertical_heading():
    plan = straight_line_plan(Pose2(0.0, 2.0, math.pi / 2), 3, 0.1)
    np.testing.assert_allclose(plan.positions[:, 1], [0.0, 1.0, 2.0])
    np.testing.assert_allclose(plan.poses[:, 2], math.pi / 2)


def test_straight_line_plan_degenerate_goal():
    plan = straight_line_plan(Pose2(0.0, 0.0, 0.0), 4, 0.1)
    np.testing.assert_array_equal(plan.positions, np.zeros((4, 2)))
    np.testing.assert_array_equal(plan.actions, np.zeros((3, 2)))


def test_straight_line_plan_validation():
    with pytest.raises(ValueError):
        straight_line_plan(Pose2(1.0, 0.0), 1, 0.1)
    with pytest.raises(ValueError):
        straight_line_plan(Pose2(1.0, 0.0), 5, 0.0)


def test_plan_from_positions_recovers_headings_and_actions():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    plan = plan_from_positions(pts, dt=0.5)
    np.testing.assert_allclose(plan.poses[:, 2], [0.0, math.pi / 2, math.pi / 2])
    np.testing.assert_allclose(plan.actions[:, 0], [2.0, 2.0])
    np.testing.assert_allclose(plan.actions[:, 1], [math.pi, 0.0])


def test_plan_from_positions_zero_length_segments():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    plan = plan_from_positions(pts, dt=0.1)
    # Stationary prefix defaults to heading 0; later stalls inherit the
    # last moving bearing.
    np.testing.assert_allclose(plan.poses[:, 2], [0.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(plan.actions[:, 0], [0.0, 10.0, 0.0])


def test_decode_empty_equals_straight_line_exactly():
    goal = Pose2(2.0, 1.0, 0.0)
    result = decode([], goal, 12, 0.1)
    base = straight_line_plan(goal, 12, 0.1)
    np.testing.assert_array_equal(result.plan.poses, base.poses)
    np.testing.assert_array_equal(result.plan.actions, base.actions)
    assert not result.unreachable_goal


def test_decode_zero_mask_bit_identical_to_removal():
    goal = Pose2(3.0, 0.5, 0.0)
    horizon = 20
    silenced = _masked((1.5, 0.1), 0.5, np.zeros(horizon))
    active = _masked((1.0, -0.2), 0.4, np.ones(horizon))
    with_zero = decode([active, silenced], goal, horizon, 0.1)
    without = decode([active], goal, horizon, 0.1)
    np.testing.assert_array_equal(with_zero.plan.poses, without.plan.poses)
    np.testing.assert_array_equal(with_zero.plan.actions, without.plan.actions)
    assert with_zero.cost_trace == without.cost_trace


def test_decode_midpoint_obstacle_clearance_and_cost():
    goal = Pose2(3.0, 0.0, 0.0)
    horizon = 30
    obstacle = _masked((1.5, 0.0), 0.5, np.ones(horizon))
    config = DecoderConfig()
    result = decode([obstacle], goal, horizon, 0.1, config)
    track = np.tile([1.5, 0.0], (horizon, 1))
    assert min_clearance(result.plan, track, 0.5, 0.0) >= -0.05
    straight = straight_line_plan(goal, horizon, 0.1)
    assert plan_cost(result.plan, [obstacle], config) <= plan_cost(
        straight, [obstacle], config
    )


def test_decode_anchors_pinned():
    rng = np.random.default_rng(4)
    for _ in range(10):
        goal = Pose2(*rng.uniform(-3, 3, size=2), 0.0)
        obstacles = [
            _masked(tuple(rng.uniform(-2, 2, size=2)), 0.4, rng.uniform(0, 1, size=15))
            for _ in range(3)
        ]
        plan = decode(obstacles, goal, 15, 0.1).plan
        np.testing.assert_array_equal(plan.positions[0], [0.0, 0.0])
        np.testing.assert_array_equal(plan.positions[-1], goal.xy)


def test_decode_cost_trace_monotone_on_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(20):
        horizon = int(rng.integers(8, 24))
        goal = Pose2(*rng.uniform(-3, 3, size=2), 0.0)
        obstacles = [
            _masked(
                tuple(rng.uniform(-2.5, 2.5, size=2)),
                float(rng.uniform(0.2, 0.7)),
                rng.uniform(0, 1, size=horizon),
            )
            for _ in range(int(rng.integers(1, 4)))
        ]
        result = decode(obstacles, goal, horizon, 0.1)
        trace = np.array(result.cost_trace)
        assert np.all(np.diff(trace) <= 0.0)


def test_decode_deterministic():
    goal = Pose2(2.5, -0.4, 0.0)
    obstacles = [_masked((1.2, 0.1), 0.5, np.ones(18))]
    first = decode(obstacles, goal, 18, 0.1)
    second = decode(obstacles, goal, 18, 0.1)
    np.testing.assert_array_equal(first.plan.poses, second.plan.poses)
    assert first.cost_trace == second.cost_trace


def test_decode_unreachable_goal_flagged():
    goal = Pose2(2.0, 0.0, 0.0)
    covering = _masked((2.0, 0.0), 0.6, np.ones(10))
    result = decode([covering], goal, 10, 0.1)
    assert result.unreachable_goal
    # Endpoints stay pinned even when unreachable.
    np.testing.assert_array_equal(result.plan.positions[-1], goal.xy)


def test_decode_mask_horizon_mismatch():
    with pytest.raises(ValueError):
        decode([_masked((1.0, 0.0), 0.5, np.ones(5))], Pose2(2.0, 0.0), 10, 0.1)


def test_plan_cost_zero_cases():
    goal = Pose2(2.0, 0.0, 0.0)
    straight = straight_line_plan(goal, 10, 0.1)
    # Zero up to float representation of the interpolated waypoints.
    assert plan_cost(straight, []) == pytest.approx(0.0, abs=1e-24)
    far = _masked((0.0, 50.0), 0.5, np.ones(10))
    assert plan_cost(straight, [far]) == pytest.approx(0.0, abs=1e-24)


def _cost_oracle(plan, obstacles, config) -> float:
    """Term-by-term re-summation of J with math.fsum."""
    pts = plan.positions
    terms = []
    for t in range(1, plan.horizon - 1):
        dd = pts[t + 1] - 2.0 * pts[t] + pts[t - 1]
        terms.append(config.smoothness_weight * float(dd @ dd))
    for mo in obstacles:
        for t in range(plan.horizon):
            m = float(mo.mask.values[t])
            if m == 0.0:
                continue
            gap = m * (mo.obstacle.radius + config.safety_clearance) - float(
                np.linalg.norm(pts[t] - np.array(mo.obstacle.center))
            )
            if gap > 0.0:
                terms.append(config.collision_weight * gap**3)
    return math.fsum(terms)


def test_plan_cost_matches_resummation_oracle():
    rng = np.random.default_rng(6)
    config = DecoderConfig()
    for _ in range(25):
        horizon = int(rng.integers(5, 15))
        pts = rng.uniform(-2, 2, size=(horizon, 2))
        plan = plan_from_positions(pts, dt=0.1)
        obstacles = [
            _masked(
                tuple(rng.uniform(-2, 2, size=2)),
                float(rng.uniform(0.3, 1.0)),
                rng.uniform(0, 1, size=horizon),
            )
            for _ in range(3)
        ]
        fast = plan_cost(plan, obstacles, config)
        slow = _cost_oracle(plan, obstacles, config)
        assert fast == pytest.approx(slow, rel=1e-12, abs=1e-12)


def test_plan_cost_mask_monotonicity():
    rng = np.random.default_rng(7)
    config = DecoderConfig()
    for _ in range(20):
        horizon = 12
        pts = rng.uniform(-2, 2, size=(horizon, 2))
        plan = plan_from_positions(pts, dt=0.1)
        center = tuple(rng.uniform(-2, 2, size=2))
        low = rng.uniform(0, 1, size=horizon)
        high = np.clip(low + rng.uniform(0, 1, size=horizon), 0.0, 1.0)
        cost_low = plan_cost(plan, [_masked(center, 0.8, low)], config)
        cost_high = plan_cost(plan, [_masked(center, 0.8, high)], config)
        assert cost_high >= cost_low


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    horizon = 9
    for _ in range(10):
        pts = rng.uniform(-1.5, 1.5, size=(horizon, 2))
        centers = pts[rng.integers(0, horizon, size=3)] + rng.normal(
            0.0, 0.2, size=(3, 2)
        )
        eff = rng.uniform(0.0, 0.8, size=(horizon, 3))
        grad = _grad(pts, centers, eff, 1.0, 100.0)
        fd = np.zeros_like(pts)
        h = 1e-6
        for t in range(horizon):
            for axis in range(2):
                plus = pts.copy()
                minus = pts.copy()
                plus[t, axis] += h
                minus[t, axis] -= h
                fd[t, axis] = (
                    _cost(plus, centers, eff, 1.0, 100.0)
                    - _cost(minus, centers, eff, 1.0, 100.0)
                ) / (2.0 * h)
        # The analytic gradient projects the pinned endpoints to zero.
        fd[0] = 0.0
        fd[-1] = 0.0
        denom = max(float(np.linalg.norm(fd)), 1e-12)
        assert float(np.linalg.norm(grad - fd)) / denom <= 1e-4


def test_reconstruction_mse():
    a = straight_line_plan(Pose2(1.0, 0.0), 5, 0.1)
    b = straight_line_plan(Pose2(1.0, 0.0), 5, 0.1)
    assert reconstruction_mse(a, b) == 0.0
    shifted = Plan(poses=b.poses + [0.0, 0.1, 0.0], actions=b.actions, dt=b.dt)
    assert reconstruction_mse(a, shifted) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        reconstruction_mse(a, straight_line_plan(Pose2(1.0, 0.0), 6, 0.1))
