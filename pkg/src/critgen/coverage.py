"""Dataset coverage over relative obstacle state features.

Each (robot pose, obstacle state) pair yields a feature sample
(r, theta, s, psi): range and bearing of the obstacle center in the robot
frame, obstacle speed, and obstacle velocity direction in the robot frame
(angles in degrees). Features are binned on fixed axes by floor division,
with the top edge closed and out-of-range values ignored per component.
Coverage of a feature subset is the fraction of occupied joint bins; a
report evaluates all 15 non-empty subsets in one pass over the samples.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import Pose2, normalize_angle

COMPONENTS = ("r", "theta", "s", "psi")


@dataclass(frozen=True)
class AxisSpec:
    """One binning axis: [lower, upper] split into floor bins of ``resolution``.

    When the span is not an exact multiple of the resolution, the final bin
    is the leftover partial interval; a value equal to ``upper`` falls into
    the last bin.
    """

    lower: float
    upper: float
    resolution: float

    def __post_init__(self) -> None:
        if not self.upper > self.lower:
            raise ValueError("upper must exceed lower")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")

    @property
    def bins(self) -> int:
        exact = (self.upper - self.lower) / self.resolution
        count = int(exact + 1e-9)
        if exact - count > 1e-9:
            count += 1
        return max(count, 1)

    def index(self, value: float) -> int | None:
        if not math.isfinite(value) or value < self.lower or value > self.upper:
            return None
        if value == self.upper:
            return self.bins - 1
        return min(int((value - self.lower) / self.resolution), self.bins - 1)


@dataclass(frozen=True)
class CoverageConfig:
    r: AxisSpec = AxisSpec(0.15, 2.0, 0.1)
    theta: AxisSpec = AxisSpec(-180.0, 180.0, 5.0)
    s: AxisSpec = AxisSpec(1.0, 2.0, 0.1)
    psi: AxisSpec = AxisSpec(-180.0, 180.0, 5.0)

    def axis(self, component: str) -> AxisSpec:
        if component not in COMPONENTS:
            raise ValueError(f"unknown component {component!r}")
        return getattr(self, component)


@dataclass(frozen=True)
class FeatureSample:
    r: float
    theta: float
    s: float
    psi: float


def features_of(robot: Pose2, obstacle_pos, obstacle_vel) -> FeatureSample:
    """Relative features of one obstacle state as seen from a robot pose.

    theta and psi are in degrees in [-180, 180); a zero-velocity obstacle
    gets psi = 0 by convention.
    """
    pos = np.asarray(obstacle_pos, dtype=float)
    vel = np.asarray(obstacle_vel, dtype=float)
    rel = pos - robot.xy
    r = float(np.linalg.norm(rel))
    theta = math.degrees(normalize_angle(math.atan2(rel[1], rel[0]) - robot.heading))
    s = float(np.linalg.norm(vel))
    if s == 0.0:
        psi = 0.0
    else:
        psi = math.degrees(normalize_angle(math.atan2(vel[1], vel[0]) - robot.heading))
    return FeatureSample(r=r, theta=theta, s=s, psi=psi)


def _canonical_subset(subset: Sequence[str]) -> tuple[str, ...]:
    names = tuple(subset)
    if len(set(names)) != len(names) or not names:
        raise ValueError("subset must be a non-empty set of distinct components")
    for name in names:
        if name not in COMPONENTS:
            raise ValueError(f"unknown component {name!r}")
    return tuple(c for c in COMPONENTS if c in names)


def bin_of(
    sample: FeatureSample, config: CoverageConfig, subset: Sequence[str]
) -> int | None:
    """Joint (mixed-radix) bin index of a sample over a component subset.

    Returns None when any subset component falls outside its axis bounds.
    """
    names = _canonical_subset(subset)
    index = 0
    for name in names:
        axis = config.axis(name)
        i = axis.index(getattr(sample, name))
        if i is None:
            return None
        index = index * axis.bins + i
    return index


class CoverageGrid:
    """Occupancy of joint bins for one component subset.

    Merging grids from independent shards is a set union, so parallel
    accumulation commutes with the final score.
    """

    def __init__(self, config: CoverageConfig, subset: Sequence[str]):
        self.config = config
        self.subset = _canonical_subset(subset)
        self.total_bins = 1
        for name in self.subset:
            self.total_bins *= config.axis(name).bins
        self.occupied: set[int] = set()

    def add(self, sample: FeatureSample) -> None:
        idx = bin_of(sample, self.config, self.subset)
        if idx is not None:
            self.occupied.add(idx)

    def merge(self, other: "CoverageGrid") -> None:
        if other.subset != self.subset or other.total_bins != self.total_bins:
            raise ValueError("grids must share subset and configuration")
        self.occupied |= other.occupied

    @property
    def occupied_count(self) -> int:
        return len(self.occupied)

    def score(self) -> float:
        return len(self.occupied) / self.total_bins


def dcs(
    samples: Iterable[FeatureSample],
    config: CoverageConfig,
    subset: Sequence[str],
) -> float:
    """Coverage score: occupied joint bins / total joint bins, in [0, 1]."""
    grid = CoverageGrid(config, subset)
    for sample in samples:
        grid.add(sample)
    return grid.score()


def all_subsets() -> list[tuple[str, ...]]:
    """All 15 non-empty component subsets, largest first."""
    out = []
    for size in range(len(COMPONENTS), 0, -1):
        out.extend(itertools.combinations(COMPONENTS, size))
    return out


@dataclass
class CoverageReport:
    """Per-subset coverage plus the axis layout it was computed with."""

    config: CoverageConfig
    entries: list[tuple[tuple[str, ...], int, int, float]] = field(default_factory=list)
    n_samples: int = 0

    def score(self, subset: Sequence[str]) -> float:
        key = _canonical_subset(subset)
        for names, _, _, value in self.entries:
            if names == key:
                return value
        raise KeyError(f"subset {subset!r} not in report")

    def text_table(self) -> str:
        header = f"{'subset':<18}{'occupied':>10}{'total':>10}{'dcs_percent':>13}"
        lines = [header, "-" * len(header)]
        for names, occupied, total, value in self.entries:
            lines.append(
                f"{'+'.join(names):<18}{occupied:>10}{total:>10}{100.0 * value:>12.2f}%"
            )
        return "\n".join(lines)


def coverage_report(
    samples: Iterable[FeatureSample], config: CoverageConfig = CoverageConfig()
) -> CoverageReport:
    """Score all 15 subsets in a single pass over the samples."""
    grids = [CoverageGrid(config, subset) for subset in all_subsets()]
    count = 0
    for sample in samples:
        count += 1
        for grid in grids:
            grid.add(sample)
    report = CoverageReport(config=config, n_samples=count)
    for grid in grids:
        report.entries.append(
            (grid.subset, grid.occupied_count, grid.total_bins, grid.score())
        )
    return report


def coverage_curve(
    samples: Sequence[FeatureSample],
    config: CoverageConfig = CoverageConfig(),
    fractions: Sequence[float] = tuple(i / 10 for i in range(1, 11)),
) -> list[tuple[float, dict[tuple[str, ...], float]]]:
    """Coverage of nested sample prefixes, for coverage-vs-count curves.

    Prefixes are nested, so every subset's score is non-decreasing in the
    fraction.
    """
    grids = [CoverageGrid(config, subset) for subset in all_subsets()]
    n = len(samples)
    checkpoints = sorted({min(max(int(math.ceil(f * n)), 0), n) for f in fractions})
    out = []
    done = 0
    for cut in checkpoints:
        for sample in samples[done:cut]:
            for grid in grids:
                grid.add(sample)
        done = cut
        out.append(
            (cut / n if n else 0.0, {g.subset: g.score() for g in grids})
        )
    return out
