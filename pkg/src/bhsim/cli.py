"""Command line interface.

Subcommands: ``simulate`` (one run), ``sweep`` (seed range), ``path``
(dump search paths), ``partition`` (dump Voronoi cells).  Exit codes:
0 success, 1 configuration error, 2 invariant violation, 3 I/O error.
``BHSIM_LOG_LEVEL`` (error | info | debug) controls logging.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .events import write_event_log
from .fleet import voronoi_partition
from .mission import generate_search_path
from .scenario import (
    ParseError,
    Scenario,
    ValidationError,
    default_scenario,
    load_scenario,
)
from .sim import CSV_HEADER, InvariantViolation, run_simulation, sweep

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2
EXIT_IO = 3


def _setup_logging() -> None:
    level_name = os.environ.get("BHSIM_LOG_LEVEL", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level_name, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load(args: argparse.Namespace) -> Scenario:
    if args.scenario:
        scenario = load_scenario(args.scenario)
    else:
        scenario = default_scenario()
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace

        scenario = replace(scenario, seed=args.seed)
    return scenario


def _parse_seed_range(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    if not sep:
        return [int(text)]
    return list(range(int(lo), int(hi) + 1))


def _cmd_simulate(args: argparse.Namespace) -> int:
    scenario = _load(args)
    result = run_simulation(scenario)
    m = result.metrics
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_event_log(out / "events.jsonl", result.events)
        (out / "metrics.csv").write_text(
            CSV_HEADER + "\n" + m.csv_row() + "\n", encoding="utf-8"
        )
    print(
        f"seed={m.seed} popped={m.balloons_popped}/{m.balloons_total} "
        f"time={m.pops_total_time if m.pops_total_time is not None else '-'} "
        f"geofence_violations={m.geofence_violations}"
    )
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    scenario = _load(args)
    seeds = _parse_seed_range(args.seeds)
    result = sweep(scenario, seeds, jobs=args.jobs, out_dir=args.out)
    if args.out:
        Path(args.out, "metrics.csv").write_text(
            "\n".join(result.csv_lines()) + "\n", encoding="utf-8"
        )
    for line in result.csv_lines():
        print(line)
    for key, value in sorted(result.aggregate.items()):
        print(f"# {key} = {value:.6g}")
    return EXIT_OK


def _agent_paths(scenario: Scenario):
    footprint = scenario.arena.footprint
    generators = []
    for i in range(scenario.agents.count):
        x, y, _ = scenario.agents.starts[i]
        xmin, ymin, xmax, ymax = footprint
        generators.append((i, (min(max(x, xmin), xmax), min(max(y, ymin), ymax))))
    cells = voronoi_partition(footprint, generators)
    paths = {}
    for cell in cells:
        paths[cell.agent_id] = generate_search_path(
            cell.polygon,
            scenario.mission.search_altitude,
            scenario.mission.lane_spacing,
            scenario.mission.wp_step,
        )
    return cells, paths


def _cmd_path(args: argparse.Namespace) -> int:
    scenario = _load(args)
    _, paths = _agent_paths(scenario)
    lines = []
    for agent_id in sorted(paths):
        path = paths[agent_id]
        lines.append(
            f"path agent={agent_id} altitude={path.altitude} "
            f"spacing={path.lane_spacing} waypoints={len(path.waypoints)}"
        )
        for wp in path.waypoints:
            lines.append(f"{wp[0]:.3f} {wp[1]:.3f} {wp[2]:.3f}")
        lines.append("")
    _write_or_print(args.out, lines)
    return EXIT_OK


def _cmd_partition(args: argparse.Namespace) -> int:
    scenario = _load(args)
    cells, _ = _agent_paths(scenario)
    lines = []
    for cell in sorted(cells, key=lambda c: c.agent_id):
        gx, gy = cell.generator
        lines.append(
            f"cell agent={cell.agent_id} generator={gx:.3f},{gy:.3f} "
            f"vertices={len(cell.polygon)}"
        )
        for vx, vy in cell.polygon:
            lines.append(f"{vx:.6f} {vy:.6f}")
        lines.append("")
    _write_or_print(args.out, lines)
    return EXIT_OK


def _write_or_print(out: str | None, lines: list[str]) -> None:
    text = "\n".join(lines).rstrip("\n") + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bhsim", description="Multi-UAV balloon interception simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim_p = sub.add_parser("simulate", help="run one scenario")
    sim_p.add_argument("--scenario", help="scenario file (defaults when omitted)")
    sim_p.add_argument("--seed", type=int, help="override the scenario seed")
    sim_p.add_argument("--out", help="directory for events.jsonl and metrics.csv")
    sim_p.set_defaults(func=_cmd_simulate)

    sweep_p = sub.add_parser("sweep", help="run a seed range")
    sweep_p.add_argument("--scenario", help="scenario file (defaults when omitted)")
    sweep_p.add_argument("--seeds", required=True, help="range A..B or single seed")
    sweep_p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    sweep_p.add_argument("--out", help="directory for per-seed logs and metrics.csv")
    sweep_p.set_defaults(func=_cmd_sweep)

    path_p = sub.add_parser("path", help="dump search paths")
    path_p.add_argument("--scenario", help="scenario file (defaults when omitted)")
    path_p.add_argument("--out", help="output file (stdout when omitted)")
    path_p.set_defaults(func=_cmd_path)

    part_p = sub.add_parser("partition", help="dump Voronoi cells")
    part_p.add_argument("--scenario", help="scenario file (defaults when omitted)")
    part_p.add_argument("--out", help="output file (stdout when omitted)")
    part_p.set_defaults(func=_cmd_partition)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
