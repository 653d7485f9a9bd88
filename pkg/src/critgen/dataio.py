"""File formats: JSON Lines artifacts, world JSON, CSV reports, odometry ingest.

Every artifact file is JSON Lines with a manifest object on the first line
(``{"manifest": {...}}``), one record per following line, and an optional
trailing ``{"summary": {...}}`` line. JSON is emitted with sorted keys and
compact separators so identical data produces identical bytes.

The raw-odometry ingest accepts CSV (header row) or JSON Lines with fields
``t, x, y`` and optional ``heading``; poses are resampled onto a uniform
time grid, cut into fixed-horizon windows with a stride, and re-anchored so
each window starts at the origin with zero heading.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .filtering import FilterReport
from .generation import ObstacleTrajectory, Scenario
from .geometry import Plan, Pose2, normalize_angles
from .hallucination import CriticalPoint
from .manifest import PipelineManifest
from .rendering import TrainingRecord
from .simulation import ObstacleSpec, TrialResult, WorldSpec


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


# --- JSON Lines artifacts ---------------------------------------------------


@dataclass
class ArtifactFile:
    manifest: PipelineManifest | None
    records: list[dict]
    summary: dict | None
    malformed: int = 0


def write_artifact(
    path: str | Path,
    manifest: PipelineManifest,
    records: Iterable[dict],
    summary: dict | None = None,
) -> int:
    """Write a manifest-headed JSON Lines file; returns the record count."""
    count = 0
    with open(path, "w") as fh:
        fh.write(dumps_canonical({"manifest": manifest.to_dict()}) + "\n")
        for rec in records:
            fh.write(dumps_canonical(rec) + "\n")
            count += 1
        if summary is not None:
            fh.write(dumps_canonical({"summary": summary}) + "\n")
    return count


def read_artifact(path: str | Path) -> ArtifactFile:
    """Read a JSON Lines artifact, tolerating plain files with no manifest.

    Unparseable lines are skipped and counted in ``malformed``.
    """
    manifest = None
    summary = None
    records: list[dict] = []
    malformed = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                malformed += 1
                continue
            if not isinstance(obj, dict):
                malformed += 1
                continue
            if lineno == 0 and "manifest" in obj:
                try:
                    manifest = PipelineManifest.from_dict(obj["manifest"])
                except (ValueError, TypeError, KeyError):
                    malformed += 1
                continue
            if "summary" in obj and len(obj) == 1:
                summary = obj["summary"]
                continue
            records.append(obj)
    return ArtifactFile(manifest=manifest, records=records, summary=summary, malformed=malformed)


# --- record codecs -----------------------------------------------------------


def plan_to_dict(plan_id: str, plan: Plan) -> dict:
    return {
        "id": plan_id,
        "dt": plan.dt,
        "poses": [[float(v) for v in row] for row in plan.poses],
        "actions": [[float(v) for v in row] for row in plan.actions],
    }


def plan_from_dict(data: dict) -> tuple[str, Plan]:
    plan = Plan(
        poses=np.asarray(data["poses"], dtype=float),
        actions=np.asarray(data["actions"], dtype=float),
        dt=float(data["dt"]),
    )
    return str(data["id"]), plan


def critical_set_to_dict(plan_id: str, report: FilterReport) -> dict:
    return {
        "plan_id": plan_id,
        "points": [[p.x, p.y, p.t_crit] for p in report.kept],
        "baseline_loss": report.baseline_loss,
        "final_loss": report.final_loss,
        "per_obstacle_reduction": [[i, r] for i, r in report.per_obstacle_reduction],
        "accepted": report.accepted,
        "open_space": report.open_space,
        "intermediate_losses": list(report.intermediate_losses),
    }


def critical_set_from_dict(data: dict) -> tuple[str, FilterReport]:
    points = [CriticalPoint(float(x), float(y), int(t)) for x, y, t in data["points"]]
    report = FilterReport(
        kept=points,
        baseline_loss=float(data["baseline_loss"]),
        final_loss=float(data["final_loss"]),
        per_obstacle_reduction=[(int(i), float(r)) for i, r in data["per_obstacle_reduction"]],
        accepted=bool(data["accepted"]),
        open_space=bool(data.get("open_space", False)),
        intermediate_losses=[float(v) for v in data.get("intermediate_losses", [])],
    )
    return str(data["plan_id"]), report


def _trajectory_to_dict(traj: ObstacleTrajectory) -> dict:
    return {
        "anchor": [traj.anchor[0], traj.anchor[1]],
        "velocity": [traj.velocity[0], traj.velocity[1]],
        "t_crit": traj.t_crit,
        "radius": traj.radius,
    }


def _trajectory_from_dict(data: dict) -> ObstacleTrajectory:
    return ObstacleTrajectory(
        anchor=(float(data["anchor"][0]), float(data["anchor"][1])),
        velocity=(float(data["velocity"][0]), float(data["velocity"][1])),
        t_crit=int(data["t_crit"]),
        radius=float(data["radius"]),
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "plan_id": scenario.plan_id,
        "horizon": scenario.horizon,
        "dt": scenario.dt,
        "trajectories": [_trajectory_to_dict(t) for t in scenario.trajectories],
        "augmented": [_trajectory_to_dict(t) for t in scenario.augmented],
    }


def scenario_from_dict(data: dict) -> Scenario:
    return Scenario(
        plan_id=str(data["plan_id"]),
        trajectories=[_trajectory_from_dict(t) for t in data["trajectories"]],
        augmented=[_trajectory_from_dict(t) for t in data.get("augmented", [])],
        horizon=int(data["horizon"]),
        dt=float(data["dt"]),
    )


def record_to_dict(record: TrainingRecord) -> dict:
    return {
        "plan_id": record.plan_id,
        "step": record.step_index,
        "scans": [[float(v) for v in row] for row in record.scans],
        "past_actions": [[float(v) for v in row] for row in record.past_actions],
        "future_actions": [[float(v) for v in row] for row in record.future_actions],
        "goal": [float(record.goal_unit[0]), float(record.goal_unit[1])],
    }


def record_from_dict(data: dict) -> TrainingRecord:
    return TrainingRecord(
        plan_id=str(data["plan_id"]),
        step_index=int(data["step"]),
        scans=np.asarray(data["scans"], dtype=float),
        past_actions=np.asarray(data["past_actions"], dtype=float),
        future_actions=np.asarray(data["future_actions"], dtype=float),
        goal_unit=np.asarray(data["goal"], dtype=float),
    )


# --- world JSON ---------------------------------------------------------------


def world_to_dict(world: WorldSpec) -> dict:
    return {
        "world_id": world.world_id,
        "difficulty": world.difficulty,
        "seed": world.seed,
        "arena": list(world.arena),
        "start": [world.start.x, world.start.y, world.start.heading],
        "goal": list(world.goal),
        "obstacles": [
            {
                "position": list(o.position),
                "velocity": list(o.velocity),
                "radius": o.radius,
                "motion": o.motion,
                "weave_amplitude": o.weave_amplitude,
                "weave_period": o.weave_period,
            }
            for o in world.obstacles
        ],
    }


def world_from_dict(data: dict) -> WorldSpec:
    return WorldSpec(
        world_id=str(data["world_id"]),
        difficulty=str(data["difficulty"]),
        seed=int(data["seed"]),
        arena=tuple(float(v) for v in data["arena"]),
        start=Pose2(*(float(v) for v in data["start"])),
        goal=(float(data["goal"][0]), float(data["goal"][1])),
        obstacles=[
            ObstacleSpec(
                position=(float(o["position"][0]), float(o["position"][1])),
                velocity=(float(o["velocity"][0]), float(o["velocity"][1])),
                radius=float(o["radius"]),
                motion=str(o.get("motion", "linear")),
                weave_amplitude=float(o.get("weave_amplitude", 0.0)),
                weave_period=float(o.get("weave_period", 4.0)),
            )
            for o in data["obstacles"]
        ],
    )


def save_world(path: str | Path, world: WorldSpec) -> None:
    Path(path).write_text(json.dumps(world_to_dict(world), sort_keys=True, indent=2) + "\n")


def load_world(path: str | Path) -> WorldSpec:
    return world_from_dict(json.loads(Path(path).read_text()))


# --- CSV reports ----------------------------------------------------------------

RESULTS_COLUMNS = [
    "world_id",
    "trial",
    "outcome",
    "elapsed_s",
    "path_length_m",
    "min_clearance_m",
]


def write_results_csv(
    path: str | Path,
    results: list[tuple[int, TrialResult]],
    manifest: PipelineManifest,
    comments: list[str] | None = None,
) -> None:
    """Results CSV; manifest and extra context ride in '#' comment lines."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest: {manifest.to_json()}\n")
        for line in comments or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_COLUMNS)
        for trial, r in results:
            writer.writerow(
                [
                    r.world_id,
                    trial,
                    r.outcome,
                    f"{r.elapsed:.3f}",
                    f"{r.path_length:.4f}",
                    f"{r.min_clearance_seen:.4f}",
                ]
            )


def read_results_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    for row in csv.DictReader(lines):
        rows.append(row)
    return rows


def write_coverage_csv(
    path: str | Path,
    rows: list[tuple[str, int, int, float]],
    manifest: PipelineManifest,
) -> None:
    """Coverage CSV with columns subset, occupied, total, dcs_percent."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest: {manifest.to_json()}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subset", "occupied", "total", "dcs_percent"])
        for subset, occupied, total, percent in rows:
            writer.writerow([subset, occupied, total, f"{percent:.2f}"])


# --- raw odometry ingest ----------------------------------------------------------

_TIME_KEYS = ("t", "time", "timestamp", "stamp")
_HEADING_KEYS = ("heading", "theta", "yaw", "h")


@dataclass
class OdometryLog:
    times: np.ndarray
    xy: np.ndarray  # (n, 2)
    headings: np.ndarray | None  # (n,) or None when the log has no heading


def _pick_key(keys: Iterable[str], candidates: tuple[str, ...]) -> str | None:
    lowered = {k.lower(): k for k in keys}
    for cand in candidates:
        if cand in lowered:
            return lowered[cand]
    return None


def load_odometry(path: str | Path) -> OdometryLog:
    """Load a raw odometry log from CSV (header row) or JSON Lines.

    Required fields: a timestamp (t/time/timestamp/stamp), x, y; heading
    (heading/theta/yaw/h) is optional. Rows are sorted by time; duplicate
    timestamps keep the first row.
    """
    text = Path(path).read_text()
    rows: list[dict] = []
    first = text.lstrip()[:1]
    if first == "{":
        for line in text.splitlines():
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    else:
        rows = list(csv.DictReader(text.splitlines()))
    if not rows:
        raise ValueError("odometry log is empty")
    tkey = _pick_key(rows[0].keys(), _TIME_KEYS)
    hkey = _pick_key(rows[0].keys(), _HEADING_KEYS)
    xkey = _pick_key(rows[0].keys(), ("x",))
    ykey = _pick_key(rows[0].keys(), ("y",))
    if tkey is None or xkey is None or ykey is None:
        raise ValueError("odometry log needs t, x, and y fields")
    times = np.array([float(r[tkey]) for r in rows])
    xy = np.array([[float(r[xkey]), float(r[ykey])] for r in rows])
    headings = None
    if hkey is not None:
        headings = np.array([float(r[hkey]) for r in rows])
    order = np.argsort(times, kind="stable")
    times, xy = times[order], xy[order]
    if headings is not None:
        headings = headings[order]
    keep = np.concatenate([[True], np.diff(times) > 1e-12])
    times, xy = times[keep], xy[keep]
    if headings is not None:
        headings = headings[keep]
    if len(times) < 2:
        raise ValueError("odometry log needs at least two distinct timestamps")
    return OdometryLog(times=times, xy=xy, headings=headings)


def resample_odometry(log: OdometryLog, dt: float) -> np.ndarray:
    """Linearly resample onto a uniform grid; returns poses (n, 3).

    Headings interpolate after unwrapping; logs without headings get
    segment-bearing headings (the final pose repeats the last bearing).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    span = log.times[-1] - log.times[0]
    n = int(math.floor(span / dt + 1e-9)) + 1
    grid = log.times[0] + dt * np.arange(n)
    x = np.interp(grid, log.times, log.xy[:, 0])
    y = np.interp(grid, log.times, log.xy[:, 1])
    if log.headings is not None:
        h = np.interp(grid, log.times, np.unwrap(log.headings))
        h = normalize_angles(h)
    else:
        d = np.diff(np.stack([x, y], axis=1), axis=0)
        lengths = np.hypot(d[:, 0], d[:, 1])
        bearings = np.arctan2(d[:, 1], d[:, 0])
        h = np.zeros(n)
        last = 0.0
        for i in range(n - 1):
            if lengths[i] > 1e-12:
                last = bearings[i]
            h[i] = last
        h[-1] = last
        # forward-fill leading stationary steps with the first real bearing
        first_moving = np.flatnonzero(lengths > 1e-12)
        if len(first_moving) > 0:
            h[: first_moving[0]] = bearings[first_moving[0]]
    return np.stack([x, y, h], axis=1)


def window_poses(poses: np.ndarray, horizon: int, stride: int = 10) -> list[np.ndarray]:
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    out = []
    for start in range(0, len(poses) - horizon + 1, stride):
        out.append(poses[start : start + horizon].copy())
    return out


def reanchor_window(poses: np.ndarray) -> np.ndarray:
    """Express a pose window in the frame of its first pose (origin, zero heading)."""
    poses = np.asarray(poses, dtype=float)
    x0, y0, h0 = poses[0]
    c, s = math.cos(h0), math.sin(h0)
    dx = poses[:, 0] - x0
    dy = poses[:, 1] - y0
    out = np.empty_like(poses)
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = normalize_angles(poses[:, 2] - h0)
    return out


def window_to_plan(window: np.ndarray, dt: float) -> Plan:
    """Build a plan from an anchored pose window, deriving (v, w) actions."""
    window = np.asarray(window, dtype=float)
    d = np.diff(window[:, :2], axis=0)
    v = np.hypot(d[:, 0], d[:, 1]) / dt
    w = normalize_angles(np.diff(window[:, 2])) / dt
    return Plan(poses=window, actions=np.stack([v, w], axis=1), dt=dt)


def ingest_odometry(
    log: OdometryLog, dt: float, horizon: int, stride: int = 10
) -> list[Plan]:
    """Resample, window, and re-anchor a raw log into fixed-horizon plans."""
    poses = resample_odometry(log, dt)
    plans = []
    for window in window_poses(poses, horizon, stride):
        plans.append(window_to_plan(reanchor_window(window), dt))
    return plans
