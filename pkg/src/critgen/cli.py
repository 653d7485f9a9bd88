"""Command-line pipeline driver.

Stages: ingest raw odometry into fixed-horizon plan windows, infer critical
points per plan, generate obstacle scenarios, render LiDAR training records,
score dataset coverage, and evaluate planners in simulated dynamic worlds.
Every output embeds a manifest (master seed, stage config, inputs, tool
version); identical manifest + inputs gives byte-identical outputs.

Exit codes: 0 on success, 1 on internal errors, 2 on invalid input/config.
"""

from __future__ import annotations

import argparse
import dataclasses
import functools
import json
import sys
from pathlib import Path

from . import dataio
from .coverage import FeatureSample, coverage_curve, coverage_report
from .generation import Scenario, select_open_space_plans
from .geometry import Plan
from .manifest import TOOL_VERSION, PipelineManifest, child_rng
from .pipeline import (
    STAGE_COVERAGE,
    STAGE_GENERATE,
    STAGE_HALLUCINATE,
    STAGE_INGEST,
    STAGE_RENDER,
    STAGE_SIMULATE,
    STAGE_WORLDS,
    PipelineConfig,
    coverage_samples,
    generate_worker,
    hallucinate_worker,
    parallel_map,
    render_worker,
    trial_worker,
)
from .planners import (
    ConstantPlanner,
    GapFollowerPlanner,
    SubprocessPlanner,
    serve_planner,
)
from .simulation import generate_worlds, success_rate

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


class InputError(Exception):
    """Invalid input or configuration; maps to exit code 2."""


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _info(message: str) -> None:
    print(message, file=sys.stderr)


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise InputError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise InputError(f"config file is not valid JSON: {exc}")
        try:
            cfg = PipelineConfig.from_dict(data)
        except (ValueError, TypeError) as exc:
            raise InputError(f"bad config: {exc}")
    else:
        cfg = PipelineConfig()
    return cfg


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    """Fold command-line flag overrides into the config document."""
    updates: dict = {}
    if getattr(args, "dt", None) is not None:
        updates["dt"] = args.dt
    if getattr(args, "horizon", None) is not None:
        updates["horizon"] = args.horizon
    if getattr(args, "stride", None) is not None:
        updates["ingest_stride"] = args.stride
    h_updates: dict = {}
    for flag, name in (
        ("obstacles", "n_obstacles"),
        ("phase1_iters", "phase1_iters"),
        ("anneal_iters", "phase2_anneal_iters"),
        ("hard_iters", "phase2_hard_iters"),
    ):
        if getattr(args, flag, None) is not None:
            h_updates[name] = getattr(args, flag)
    if h_updates:
        updates["hallucination"] = dataclasses.replace(cfg.hallucination, **h_updates)
    if getattr(args, "scenarios_per_plan", None) is not None:
        updates["generator"] = dataclasses.replace(
            cfg.generator, scenarios_per_plan=args.scenarios_per_plan
        )
    l_updates: dict = {}
    for flag, name in (
        ("beams", "beams"),
        ("max_range", "max_range"),
        ("noise_sigma", "range_noise_sigma"),
    ):
        if getattr(args, flag, None) is not None:
            l_updates[name] = getattr(args, flag)
    if l_updates:
        updates["lidar"] = dataclasses.replace(cfg.lidar, **l_updates)
    if getattr(args, "trials_per_world", None) is not None:
        updates["trials_per_world"] = args.trials_per_world
    t_updates: dict = {}
    if getattr(args, "max_time", None) is not None:
        t_updates["max_time"] = args.max_time
    if getattr(args, "no_safety", False):
        t_updates["safety_enabled"] = False
    if t_updates:
        updates["trial"] = dataclasses.replace(cfg.trial, **t_updates)
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg


def _manifest(args: argparse.Namespace, cfg: PipelineConfig, stage: str, inputs: list[str]) -> PipelineManifest:
    return PipelineManifest(
        master_seed=args.seed,
        stage=stage,
        config=cfg.to_dict(),
        inputs=inputs,
        tool_version=TOOL_VERSION,
    )


def _read_plans(path: str, horizon: int | None = None) -> tuple[list[tuple[str, Plan]], int]:
    """Parse a plans artifact; returns ((id, plan) pairs, skipped count)."""
    try:
        art = dataio.read_artifact(path)
    except FileNotFoundError:
        raise InputError(f"plans file not found: {path}")
    plans: list[tuple[str, Plan]] = []
    skipped = art.malformed
    for rec in art.records:
        try:
            plan_id, plan = dataio.plan_from_dict(rec)
        except (KeyError, ValueError, TypeError) as exc:
            _warn(f"skipping malformed plan line: {exc}")
            skipped += 1
            continue
        if horizon is not None and plan.horizon != horizon:
            _warn(
                f"skipping plan {plan_id}: horizon {plan.horizon} != configured {horizon}"
            )
            skipped += 1
            continue
        plans.append((plan_id, plan))
    return plans, skipped


# --- subcommands ------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    records = []
    n_windows = 0
    for path in args.logs:
        try:
            log = dataio.load_odometry(path)
        except FileNotFoundError:
            raise InputError(f"odometry log not found: {path}")
        except ValueError as exc:
            raise InputError(f"{path}: {exc}")
        plans = dataio.ingest_odometry(log, cfg.dt, cfg.horizon, cfg.ingest_stride)
        stem = Path(path).stem
        for k, plan in enumerate(plans):
            records.append(dataio.plan_to_dict(f"{stem}_w{k:04d}", plan))
        n_windows += len(plans)
        _info(f"{path}: {len(plans)} windows")
    manifest = _manifest(args, cfg, STAGE_INGEST, [str(p) for p in args.logs])
    summary = {"plans": n_windows, "logs": len(args.logs)}
    dataio.write_artifact(args.out, manifest, records, summary)
    if n_windows == 0:
        _warn("no windows produced (logs shorter than one horizon?)")
    _info(f"wrote {n_windows} plan windows to {args.out}")
    return EXIT_OK


def cmd_hallucinate(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    plans, skipped = _read_plans(args.plans, cfg.horizon)
    if not plans:
        print("no plans", file=sys.stderr)
        return EXIT_USAGE
    worker = functools.partial(
        hallucinate_worker,
        hallucination=cfg.hallucination,
        filter_config=cfg.filter,
        master_seed=args.seed,
        samples_per_hypothesis=cfg.samples_per_hypothesis,
    )
    items = [(i, plan_id, plan) for i, (plan_id, plan) in enumerate(plans)]
    _info(f"fitting {len(items)} plans ({args.workers} workers)")
    results = parallel_map(worker, items, args.workers)
    records = []
    accepted = rejected = open_space = 0
    for plan_id, report in results:
        if report.open_space:
            open_space += 1
        elif report.accepted:
            accepted += 1
            records.append(dataio.critical_set_to_dict(plan_id, report))
        else:
            rejected += 1
    manifest = _manifest(args, cfg, STAGE_HALLUCINATE, [args.plans])
    summary = {
        "plans": len(plans),
        "accepted": accepted,
        "rejected": rejected,
        "open_space": open_space,
        "skipped_malformed": skipped,
    }
    dataio.write_artifact(args.out, manifest, records, summary)
    _info(
        f"accepted {accepted}/{len(plans)} plans "
        f"({rejected} rejected, {open_space} open-space, {skipped} skipped)"
    )
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    try:
        critical = dataio.read_artifact(args.critical)
    except FileNotFoundError:
        raise InputError(f"critical-sets file not found: {args.critical}")
    plans, _ = _read_plans(args.plans)
    by_id = dict(plans)
    items = []
    malformed = critical.malformed
    missing = 0
    empty_kept = 0
    for i, rec in enumerate(critical.records):
        try:
            plan_id, report = dataio.critical_set_from_dict(rec)
        except (KeyError, ValueError, TypeError) as exc:
            _warn(f"skipping malformed critical-set line: {exc}")
            malformed += 1
            continue
        if plan_id not in by_id:
            _warn(f"no plan with id {plan_id}; skipping")
            missing += 1
            continue
        if not report.kept:
            _warn(f"plan {plan_id}: zero kept points, zero scenarios")
            empty_kept += 1
            continue
        items.append((i, plan_id, by_id[plan_id], report.kept))
    worker = functools.partial(
        generate_worker,
        generator=cfg.generator,
        master_seed=args.seed,
        augment=not args.no_augment,
    )
    results = parallel_map(worker, items, args.workers)
    scenarios: list[Scenario] = []
    dropped = 0
    for _, per_plan in results:
        scenarios.extend(per_plan)
        dropped += cfg.generator.scenarios_per_plan - len(per_plan)
    open_space_count = 0
    if not args.no_open_space:
        covered = {plan_id for _, plan_id, _, _ in items}
        for plan_id, plan in plans:
            if plan_id in covered:
                continue
            if select_open_space_plans([plan], cfg.generator):
                scenarios.append(
                    Scenario(
                        plan_id=plan_id,
                        trajectories=[],
                        augmented=[],
                        horizon=plan.horizon,
                        dt=plan.dt,
                    )
                )
                open_space_count += 1
    manifest = _manifest(args, cfg, STAGE_GENERATE, [args.critical, args.plans])
    summary = {
        "scenarios": len(scenarios),
        "dropped_scenarios": dropped,
        "open_space_scenarios": open_space_count,
        "plans_with_points": len(items),
        "zero_kept": empty_kept,
        "missing_plans": missing,
        "malformed": malformed,
    }
    dataio.write_artifact(
        args.out, manifest, (dataio.scenario_to_dict(s) for s in scenarios), summary
    )
    if args.emit_plot_data:
        _write_trajectory_plot_data(args.emit_plot_data, scenarios, by_id)
    _info(
        f"wrote {len(scenarios)} scenarios ({dropped} dropped, "
        f"{open_space_count} open-space) to {args.out}"
    )
    return EXIT_OK


def _write_trajectory_plot_data(
    path: str, scenarios: list[Scenario], plans: dict[str, Plan]
) -> None:
    """Plottable CSV of obstacle positions over time, one row per step."""
    with open(path, "w") as fh:
        fh.write("plan_id,scenario,obstacle,t,x,y\n")
        for s_idx, scenario in enumerate(scenarios):
            if scenario.plan_id not in plans:
                continue
            for o_idx, traj in enumerate(scenario.all_trajectories()):
                pos = traj.positions(scenario.horizon, scenario.dt)
                for t in range(1, scenario.horizon + 1):
                    x, y = pos[t - 1]
                    fh.write(
                        f"{scenario.plan_id},{s_idx},{o_idx},{t},{x:.6f},{y:.6f}\n"
                    )


def cmd_render(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    try:
        art = dataio.read_artifact(args.scenarios)
    except FileNotFoundError:
        raise InputError(f"scenarios file not found: {args.scenarios}")
    plans, _ = _read_plans(args.plans)
    by_id = dict(plans)
    items = []
    missing = malformed = 0
    for i, rec in enumerate(art.records):
        try:
            scenario = dataio.scenario_from_dict(rec)
        except (KeyError, ValueError, TypeError) as exc:
            _warn(f"skipping malformed scenario line: {exc}")
            malformed += 1
            continue
        if scenario.plan_id not in by_id:
            _warn(f"no plan with id {scenario.plan_id}; skipping")
            missing += 1
            continue
        items.append((i, scenario.plan_id, by_id[scenario.plan_id], scenario))
    worker = functools.partial(
        render_worker,
        lidar=cfg.lidar,
        master_seed=args.seed,
        scan_history=cfg.scan_history,
        action_horizon=cfg.action_horizon,
    )
    per_scenario = parallel_map(worker, items, args.workers)
    manifest = _manifest(args, cfg, STAGE_RENDER, [args.scenarios, args.plans])
    rows = [
        dataio.record_to_dict(record)
        for records in per_scenario
        for record in records
    ]
    summary = {
        "records": len(rows),
        "scenarios": len(items),
        "missing_plans": missing,
        "malformed": malformed + art.malformed,
    }
    dataio.write_artifact(args.out, manifest, rows, summary)
    _info(f"wrote {len(rows)} training records to {args.out}")
    return EXIT_OK


def _coverage_samples_from_file(args: argparse.Namespace) -> list[FeatureSample]:
    try:
        art = dataio.read_artifact(args.input)
    except FileNotFoundError:
        raise InputError(f"input file not found: {args.input}")
    if not art.records:
        return []
    first = art.records[0]
    if {"r", "theta", "s", "psi"} <= set(first):
        samples = []
        for rec in art.records:
            samples.append(
                FeatureSample(
                    r=float(rec["r"]),
                    theta=float(rec["theta"]),
                    s=float(rec["s"]),
                    psi=float(rec["psi"]),
                )
            )
        return samples
    if "trajectories" in first:
        if not args.plans:
            raise InputError("scenario input needs --plans to recover robot poses")
        plans, _ = _read_plans(args.plans)
        by_id = dict(plans)
        samples = []
        for rec in art.records:
            scenario = dataio.scenario_from_dict(rec)
            plan = by_id.get(scenario.plan_id)
            if plan is None:
                _warn(f"no plan with id {scenario.plan_id}; skipping")
                continue
            samples.extend(coverage_samples(plan, scenario))
        return samples
    raise InputError(
        "input is neither a scenarios file nor a feature-sample file "
        "(expected trajectories or r/theta/s/psi fields)"
    )


def cmd_coverage(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    samples = _coverage_samples_from_file(args)
    report = coverage_report(samples, cfg.coverage)
    manifest = _manifest(args, cfg, STAGE_COVERAGE, [args.input])
    rows = [
        ("+".join(names), occupied, total, 100.0 * value)
        for names, occupied, total, value in report.entries
    ]
    dataio.write_coverage_csv(args.out, rows, manifest)
    print(report.text_table())
    print(f"samples: {report.n_samples}")
    if args.emit_plot_data:
        curve = coverage_curve(samples, cfg.coverage)
        with open(args.emit_plot_data, "w") as fh:
            fh.write("fraction,subset,dcs_percent\n")
            for fraction, scores in curve:
                for subset, value in scores.items():
                    fh.write(f"{fraction:.2f},{'+'.join(subset)},{100.0 * value:.4f}\n")
    return EXIT_OK


def _planner_factory(args: argparse.Namespace, cfg: PipelineConfig):
    name = args.planner
    if name == "gap":
        return functools.partial(
            GapFollowerPlanner,
            cfg.trial.lidar,
            m_a=cfg.trial.m_a,
            max_speed=min(args.speed, cfg.trial.max_speed),
        )
    if name == "constant":
        return functools.partial(ConstantPlanner, args.speed, args.omega, cfg.trial.m_a)
    if name == "subprocess":
        if not args.planner_cmd:
            raise InputError("--planner subprocess needs --planner-cmd")
        return functools.partial(SubprocessPlanner, args.planner_cmd, cfg.trial.m_a)
    raise InputError(f"unknown planner {name!r}")


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    if args.worlds_dir:
        paths = sorted(Path(args.worlds_dir).glob("*.json"))
        if not paths:
            raise InputError(f"no world files in {args.worlds_dir}")
        worlds = [dataio.load_world(p) for p in paths]
    elif args.generate_worlds:
        rng = child_rng(args.seed, STAGE_WORLDS, 0)
        worlds = generate_worlds(cfg.worldgen, rng)
    else:
        raise InputError("need --worlds-dir or --generate-worlds")
    if args.worlds_out:
        out_dir = Path(args.worlds_out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for world in worlds:
            dataio.save_world(out_dir / f"{world.world_id}.json", world)
    factory = _planner_factory(args, cfg)
    items = []
    labels = []
    for world in worlds:
        for trial in range(1, cfg.trials_per_world + 1):
            items.append((len(items), world))
            labels.append(trial)
    print(f"scheduled {len(items)} trials over {len(worlds)} worlds")
    worker = functools.partial(
        trial_worker,
        planner_factory=factory,
        trial_config=cfg.trial,
        master_seed=args.seed,
    )
    results = parallel_map(worker, items, args.workers)
    summary = success_rate(results)
    manifest = _manifest(
        args, cfg, STAGE_SIMULATE, [args.worlds_dir or "<generated>"]
    )
    dataio.write_results_csv(
        args.out,
        list(zip(labels, results)),
        manifest,
        comments=summary.format_lines()
        + [f"goal_tolerance_m: {cfg.trial.goal_tolerance}", f"max_time_s: {cfg.trial.max_time}"],
    )
    for line in summary.format_lines():
        print(line)
    collisions = sum(1 for r in results if r.outcome == "collision")
    timeouts = sum(1 for r in results if r.outcome == "timeout")
    _info(f"collisions: {collisions}, timeouts: {timeouts}")
    _info(f"wrote results to {args.out}")
    return EXIT_OK


def cmd_plan_server(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    if args.planner == "constant":
        planner = ConstantPlanner(args.speed, args.omega, cfg.trial.m_a)
    elif args.planner == "gap":
        planner = GapFollowerPlanner(cfg.trial.lidar, m_a=cfg.trial.m_a)
    else:
        raise InputError(f"unknown planner {args.planner!r}")
    serve_planner(planner)
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="critgen",
        description=(
            "Infer critical obstacle configurations from recorded motion plans, "
            "generate dynamic-obstacle training scenarios, and evaluate planners "
            "in simulation."
        ),
    )
    parser.add_argument("--version", action="version", version=f"critgen {TOOL_VERSION}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--config", help="JSON config file mirroring the manifest")
    common.add_argument(
        "--workers", type=int, default=1, help="parallel worker processes (default 1)"
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser(
        "ingest", parents=[common], help="raw odometry logs -> plan windows"
    )
    p.add_argument("logs", nargs="+", help="CSV or JSON Lines odometry logs")
    p.add_argument("--out", required=True)
    p.add_argument("--dt", type=float, help="resample interval in seconds")
    p.add_argument("--horizon", type=int, help="poses per window")
    p.add_argument("--stride", type=int, help="window stride in steps (default 10)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser(
        "hallucinate", parents=[common], help="plan windows -> critical point sets"
    )
    p.add_argument("plans")
    p.add_argument("--out", required=True)
    p.add_argument("--horizon", type=int, help="expected plan horizon")
    p.add_argument("--obstacles", type=int, help="hypotheses per plan")
    p.add_argument("--phase1-iters", type=int, dest="phase1_iters")
    p.add_argument("--anneal-iters", type=int, dest="anneal_iters")
    p.add_argument("--hard-iters", type=int, dest="hard_iters")
    p.set_defaults(func=cmd_hallucinate)

    p = sub.add_parser(
        "generate", parents=[common], help="critical sets -> obstacle scenarios"
    )
    p.add_argument("critical")
    p.add_argument("--plans", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scenarios-per-plan", type=int, dest="scenarios_per_plan")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument(
        "--no-open-space",
        action="store_true",
        help="skip emitting obstacle-free scenarios for fast straight plans",
    )
    p.add_argument("--emit-plot-data", help="CSV of obstacle positions over time")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser(
        "render", parents=[common], help="scenarios -> LiDAR training records"
    )
    p.add_argument("scenarios")
    p.add_argument("--plans", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beams", type=int)
    p.add_argument("--max-range", type=float, dest="max_range")
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser(
        "coverage", parents=[common], help="scenarios or feature samples -> DCS report"
    )
    p.add_argument("input")
    p.add_argument("--plans", help="plans file (needed for scenario input)")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--emit-plot-data", help="CSV of DCS vs. sample-count fractions"
    )
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser(
        "simulate", parents=[common], help="run closed-loop trials in dynamic worlds"
    )
    p.add_argument("--worlds-dir", help="directory of world JSON files")
    p.add_argument(
        "--generate-worlds",
        action="store_true",
        help="generate the default tiered world set",
    )
    p.add_argument("--worlds-out", help="directory to save generated worlds")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--planner", default="gap", choices=["gap", "constant", "subprocess"]
    )
    p.add_argument("--planner-cmd", help="command line for --planner subprocess")
    p.add_argument("--speed", type=float, default=1.0, help="planner speed knob")
    p.add_argument("--omega", type=float, default=0.0, help="constant planner turn rate")
    p.add_argument("--trials-per-world", type=int, dest="trials_per_world")
    p.add_argument("--max-time", type=float, dest="max_time")
    p.add_argument("--no-safety", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "plan-server",
        parents=[common],
        help="serve a reference planner over stdin/stdout (JSON lines)",
    )
    p.add_argument("--planner", default="gap", choices=["gap", "constant"])
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--omega", type=float, default=0.0)
    p.set_defaults(func=cmd_plan_server)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
