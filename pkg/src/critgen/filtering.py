"""Greedy selection of the critical points that explain a recorded plan.

Loss of a candidate set = reconstruction MSE between the recorded plan and
the decode of the set (each point becomes a circular obstacle with a one-hot
mask at its critical timestep). Starting from the straight-line baseline,
greedily add the candidate with the lowest loss while each addition reduces
the current loss by at least ``min_relative_reduction``, up to ``n_max``
points. The plan is accepted when the final loss is at most
``acceptance_ratio`` of the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field


from .decoder import (
    DecoderConfig,
    MaskedObstacle,
    TemporalMask,
    decode,
    reconstruction_mse,
    straight_line_plan,
)
from .geometry import Obstacle, Plan
from .hallucination import CriticalPoint

OPEN_SPACE_BASELINE = 1e-12


@dataclass(frozen=True)
class FilterConfig:
    n_max: int = 7
    min_relative_reduction: float = 0.01
    acceptance_ratio: float = 0.10

    def __post_init__(self) -> None:
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not 0.0 < self.min_relative_reduction < 1.0:
            raise ValueError("min_relative_reduction must lie in (0, 1)")
        if not 0.0 < self.acceptance_ratio < 1.0:
            raise ValueError("acceptance_ratio must lie in (0, 1)")


@dataclass
class FilterReport:
    """Outcome of the greedy filter for one plan.

    ``per_obstacle_reduction`` lists (candidate index, relative reduction)
    in acceptance order; ``intermediate_losses`` starts at the baseline and
    appends the loss after each acceptance.
    """

    kept: list[CriticalPoint]
    baseline_loss: float
    final_loss: float
    per_obstacle_reduction: list[tuple[int, float]]
    accepted: bool
    open_space: bool = False
    intermediate_losses: list[float] = field(default_factory=list)


def _one_hot_obstacles(
    points: list[CriticalPoint], horizon: int, radius: float
) -> list[MaskedObstacle]:
    obstacles = []
    for p in points:
        if not 1 <= p.t_crit <= horizon:
            raise ValueError(f"critical timestep {p.t_crit} outside 1..{horizon}")
        obstacles.append(
            MaskedObstacle(
                Obstacle((p.x, p.y), radius), TemporalMask.one_hot(horizon, p.t_crit - 1)
            )
        )
    return obstacles


def reconstruction_loss(
    points: list[CriticalPoint],
    plan: Plan,
    radius: float,
    decoder_config: DecoderConfig = DecoderConfig(),
) -> float:
    """MSE between the plan and the decode of one-hot-masked critical points."""
    obstacles = _one_hot_obstacles(points, plan.horizon, radius)
    result = decode(obstacles, plan.goal, plan.horizon, plan.dt, decoder_config)
    return reconstruction_mse(plan, result.plan)


def filter_critical_points(
    candidates: list[CriticalPoint],
    plan: Plan,
    radius: float,
    decoder_config: DecoderConfig = DecoderConfig(),
    config: FilterConfig = FilterConfig(),
) -> FilterReport:
    """Greedily keep the candidates that explain the plan.

    Deterministic; ties in candidate loss resolve to the lowest candidate
    index. A baseline below 1e-12 means the plan is already straight: it is
    reported as open space with nothing kept.
    """
    baseline_plan = straight_line_plan(plan.goal, plan.horizon, plan.dt)
    baseline = reconstruction_mse(plan, baseline_plan)
    if baseline < OPEN_SPACE_BASELINE:
        return FilterReport(
            kept=[],
            baseline_loss=baseline,
            final_loss=baseline,
            per_obstacle_reduction=[],
            accepted=False,
            open_space=True,
            intermediate_losses=[baseline],
        )
    kept_idx: list[int] = []
    remaining = list(range(len(candidates)))
    current = baseline
    losses = [baseline]
    reductions: list[tuple[int, float]] = []
    while remaining and len(kept_idx) < config.n_max and current > 0.0:
        best_idx = None
        best_loss = None
        for i in remaining:
            trial = [candidates[j] for j in kept_idx] + [candidates[i]]
            loss = reconstruction_loss(trial, plan, radius, decoder_config)
            if best_loss is None or loss < best_loss:
                best_idx, best_loss = i, loss
        if best_loss > (1.0 - config.min_relative_reduction) * current:
            break
        kept_idx.append(best_idx)
        remaining.remove(best_idx)
        reductions.append((best_idx, (current - best_loss) / current))
        current = best_loss
        losses.append(current)
    return FilterReport(
        kept=[candidates[i] for i in kept_idx],
        baseline_loss=baseline,
        final_loss=current,
        per_obstacle_reduction=reductions,
        accepted=current <= config.acceptance_ratio * baseline,
        open_space=False,
        intermediate_losses=losses,
    )
