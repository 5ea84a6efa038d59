"""Command-line front end: run scenarios, compare runs, list built-ins.

`run` simulates a scenario (built-in name or YAML file), writes the
trajectory log, metrics, distance series, events and timing sidecar, and
exits nonzero when a safety radius was violated or a goal was missed.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

from . import logs, scenarios, swarm
from .errors import ConfigError
from .logs import RunMetrics


@dataclass
class RunResult:
    metrics: RunMetrics
    out_dir: str
    exit_code: int
    sim: swarm.SimResult


def _resolve_scenario(
    name_or_path: str,
    seed: int | None,
    duration: float | None,
    overrides: list[str],
) -> scenarios.ScenarioConfig:
    if os.path.exists(name_or_path) or name_or_path.endswith((".yaml", ".yml")):
        data = scenarios.load_scenario_file(name_or_path)
    else:
        data = scenarios.scenario_dict(name_or_path)
    if overrides:
        data = scenarios.apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
    if duration is not None:
        data["duration"] = duration
    return scenarios.scenario_from_dict(data)


def run_scenario(
    config: scenarios.ScenarioConfig,
    out_dir: str | None = None,
    settings=None,
) -> RunResult:
    """Simulate, write artifacts, and compute metrics from the written log."""
    if out_dir is None:
        out_dir = os.path.join("runs", f"{config.name}_seed{config.seed}")
    os.makedirs(out_dir, exist_ok=True)

    result = swarm.simulate(config, settings=settings)

    log_path = os.path.join(out_dir, "trajectory.csv")
    logs.write_trajectory_log(log_path, result)
    rows = logs.read_trajectory_log(log_path)
    metrics = logs.compute_metrics(
        rows,
        scenario=config.name,
        seed=config.seed,
        goal_tolerance=config.goal_tolerance,
        solve_ms=result.solve_ms,
    )
    logs.write_metrics(os.path.join(out_dir, "metrics.txt"), metrics)
    logs.write_timing(
        os.path.join(out_dir, "timing.txt"),
        metrics,
        result.wall_time,
        len(result.solve_ms),
    )
    logs.write_distance_series(os.path.join(out_dir, "distances.csv"), rows)
    logs.write_events(os.path.join(out_dir, "events.csv"), result.events)
    return RunResult(metrics=metrics, out_dir=out_dir, exit_code=metrics.exit_code, sim=result)


def _cmd_run(args) -> int:
    try:
        config = _resolve_scenario(args.scenario, args.seed, args.duration, args.set or [])
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_scenario(config, out_dir=args.out)
    m = result.metrics
    print(f"scenario {config.name} seed {config.seed}: {m.ticks} ticks")
    for pair, dmin in sorted(m.pair_min_distance.items()):
        print(f"  min distance {pair[0]}-{pair[1]}: {dmin:.3f} m")
    for aid in sorted(m.goal_error):
        print(f"  goal error {aid}: {m.goal_error[aid]:.4f} m")
    print(f"  slack activations: {m.slack_activations}")
    print(f"  hard radius violations: {m.hard_radius_violations}")
    print(f"  solve ms mean/max: {m.solve_ms_mean:.2f}/{m.solve_ms_max:.2f}")
    print(f"  artifacts in {result.out_dir}")
    if result.exit_code:
        print("  FAILED: safety violation or missed goal", file=sys.stderr)
    return result.exit_code


def _cmd_compare(args) -> int:
    try:
        a = logs.read_metrics(args.a)
        b = logs.read_metrics(args.b)
        rows = logs.compare_metrics(a, b)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    width = max(len(r[0]) for r in rows)
    print(f"{'metric'.ljust(width)}  {'A':>14} {'B':>14} {'delta':>14}")
    for key, va, vb, delta in rows:
        if isinstance(delta, float):
            print(f"{key.ljust(width)}  {va:>14.6g} {vb:>14.6g} {delta:>+14.6g}")
        else:
            print(f"{key.ljust(width)}  {str(va):>14} {str(vb):>14} {str(delta):>14}")
    return 0


def _cmd_list(_args) -> int:
    for name in sorted(scenarios.SCENARIO_DESCRIPTIONS):
        print(f"{name}: {scenarios.SCENARIO_DESCRIPTIONS[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarm-nmpc",
        description="decentralized multi-vehicle tracking and avoidance simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario and write artifacts")
    p_run.add_argument("scenario", help="built-in name or path to a YAML file")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--duration", type=float, default=None, help="override duration, s")
    p_run.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override any config field by dotted path (repeatable)",
    )
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate deltas between two metrics files")
    p_cmp.add_argument("a")
    p_cmp.add_argument("b")
    p_cmp.set_defaults(func=_cmd_compare)

    p_ls = sub.add_parser("list-scenarios", help="list built-in scenarios")
    p_ls.set_defaults(func=_cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
