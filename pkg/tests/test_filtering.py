"""Greedy critical-point filter: thresholds, cap, acceptance gate."""

import numpy as np
import pytest

from conftest import multi_plant_plan, plant_plan
from critgen.decoder import DecoderConfig
from critgen.filtering import (
    FilterConfig,
    filter_critical_points,
    reconstruction_loss,
)
from critgen.geometry import Pose2
from critgen.hallucination import CriticalPoint

_DEC = DecoderConfig(iterations=150)


def test_filter_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(n_max=0)
    with pytest.raises(ValueError):
        FilterConfig(min_relative_reduction=0.0)
    with pytest.raises(ValueError):
        FilterConfig(acceptance_ratio=1.0)


def test_straight_plan_reports_open_space():
    from conftest import line_plan

    plan = line_plan(30, 0.1, (3.0, 0.0))
    report = filter_critical_points(
        [CriticalPoint(1.5, 0.3, 10)], plan, radius=0.5, decoder_config=_DEC
    )
    assert report.open_space
    assert not report.accepted
    assert report.kept == []
    assert report.final_loss == report.baseline_loss
    assert report.intermediate_losses == [report.baseline_loss]


def test_planted_point_kept_and_decoy_rejected():
    planted = CriticalPoint(1.6, 0.2, 24)
    plan = plant_plan((planted.x, planted.y), planted.t_crit, config=_DEC)
    decoy = CriticalPoint(-3.0, 4.0, 10)
    report = filter_critical_points([decoy, planted], plan, 0.5, _DEC)
    assert report.accepted
    assert report.kept == [planted]
    # The planted point reproduces the fixture decode exactly.
    assert report.final_loss == pytest.approx(0.0, abs=1e-20)
    assert report.per_obstacle_reduction[0][0] == 1


def test_useless_candidates_keep_nothing():
    plan = plant_plan((1.6, 0.2), 24, config=_DEC)
    decoys = [CriticalPoint(-4.0, -4.0, 5), CriticalPoint(6.0, 6.0, 40)]
    report = filter_critical_points(decoys, plan, 0.5, _DEC)
    assert report.kept == []
    assert not report.accepted
    assert report.final_loss == report.baseline_loss


def test_duplicate_candidate_rejected_by_threshold():
    planted = CriticalPoint(1.6, 0.2, 24)
    plan = plant_plan((planted.x, planted.y), planted.t_crit, config=_DEC)
    report = filter_critical_points([planted, planted], plan, 0.5, _DEC)
    # The duplicate cannot reduce the already-exact reconstruction by 1%.
    assert len(report.kept) == 1
    assert report.per_obstacle_reduction[0][0] == 0


def test_n_max_caps_greedy_selection():
    horizon, dt = 120, 0.1
    goal = Pose2(10.0, 0.0, 0.0)
    spots = [(10.0 * (t - 1) / (horizon - 1), 0.25, t) for t in range(12, 109, 12)]
    assert len(spots) == 9
    dec = DecoderConfig(iterations=80)
    plan = multi_plant_plan(spots, horizon, dt, goal, config=dec)
    candidates = [CriticalPoint(x, y, t) for x, y, t in spots]
    report = filter_critical_points(candidates, plan, 0.5, dec)
    assert len(report.kept) == 7
    assert len(report.per_obstacle_reduction) == 7
    for _, reduction in report.per_obstacle_reduction:
        assert reduction >= 0.01


def test_intermediate_losses_non_increasing():
    planted = CriticalPoint(1.6, 0.2, 24)
    plan = plant_plan((planted.x, planted.y), planted.t_crit, config=_DEC)
    near_miss = CriticalPoint(1.5, 0.25, 22)
    report = filter_critical_points([near_miss, planted], plan, 0.5, _DEC)
    losses = np.array(report.intermediate_losses)
    assert losses[0] == report.baseline_loss
    assert np.all(np.diff(losses) <= 0.0)
    assert losses[-1] == report.final_loss
    # Each recorded reduction honors the retention threshold.
    for idx, reduction in report.per_obstacle_reduction:
        assert reduction >= 0.01


def test_acceptance_requires_90_percent_reduction():
    planted = CriticalPoint(1.6, 0.2, 24)
    plan = plant_plan((planted.x, planted.y), planted.t_crit, config=_DEC)
    # A point at the right place but a useless timestep only partially
    # explains the detour.
    off_time = CriticalPoint(1.6, 0.2, 44)
    report = filter_critical_points([off_time], plan, 0.5, _DEC)
    assert report.final_loss > 0.10 * report.baseline_loss
    assert not report.accepted


def test_empty_candidates():
    plan = plant_plan((1.6, 0.2), 24, config=_DEC)
    report = filter_critical_points([], plan, 0.5, _DEC)
    assert report.kept == []
    assert not report.accepted
    assert report.final_loss == report.baseline_loss


def test_reconstruction_loss_validates_timestep():
    plan = plant_plan((1.6, 0.2), 24, config=_DEC)
    with pytest.raises(ValueError):
        reconstruction_loss([CriticalPoint(1.0, 0.0, 49)], plan, 0.5, _DEC)
    with pytest.raises(ValueError):
        reconstruction_loss([CriticalPoint(1.0, 0.0, 0)], plan, 0.5, _DEC)


def test_filter_deterministic():
    planted = CriticalPoint(1.6, 0.2, 24)
    plan = plant_plan((planted.x, planted.y), planted.t_crit, config=_DEC)
    candidates = [CriticalPoint(1.4, 0.1, 20), planted, CriticalPoint(2.0, -0.4, 30)]
    first = filter_critical_points(candidates, plan, 0.5, _DEC)
    second = filter_critical_points(candidates, plan, 0.5, _DEC)
    assert first.kept == second.kept
    assert first.intermediate_losses == second.intermediate_losses
