"""Command-line front end.

Exit codes: 0 success, 1 invalid scenario or arguments (nothing written),
2 safety violation in the run, 3 leader planning, initial commit or
scenario generation failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from .gatekeeper import InitialCommitFailure
from .mission import LeaderPath, PlanningFailure, plan_leader_path
from .scenario import GenerationFailure, dump_yaml, generate_scenario, load_scenario
from .sim import Method, RunMetrics, Scenario, ScenarioError, run

log = logging.getLogger("gatekeep")

EXIT_OK, EXIT_INVALID, EXIT_UNSAFE, EXIT_PLANNING = 0, 1, 2, 3
PUBLISHED_CONTEXT = ("published totals, not reproduced here: CBF-QP 9.49 s, "
                 "trajectory optimization 302.65 s, gatekeeper 3.61 s")
_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = _LEVELS.get(os.environ.get("GK_LOG_LEVEL", "error").strip().lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def write_trajectories(path: Path, m: RunMetrics):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_id", "t", "x", "y", "theta", "v", "omega", "min_h", "deviation"])
        for a in m.agents:
            for i in range(len(a.times)):
                x, y, th = a.states[i]
                v, om = a.inputs[i]
                w.writerow([a.agent_id] + [repr(float(c)) for c in (a.times[i], x, y, th, v, om, a.min_h[i],
                                                                    a.deviation[i])])


def write_commits(path: Path, m: RunMetrics):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_id", "t_k", "t_s", "T_B", "B_bar", "valid_count", "updated"])
        for c in m.commits:
            w.writerow([c.agent_id, repr(float(c.t_k)), repr(float(c.t_s)), repr(float(c.T_B)), repr(float(c.bound)),
                        c.valid_count, int(c.updated)])


def write_outputs(out: Path, m: RunMetrics):
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(out / "trajectories.csv", m)
    if m.method is Method.GATEKEEPER:
        write_commits(out / "commits.csv", m)
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(m.summary(), fh, indent=2)
        fh.write("\n")


def _prepare(scenario_path: str, seed: Optional[int]) -> tuple[Scenario, LeaderPath]:
    sc = load_scenario(scenario_path)
    if seed is not None:
        sc = dataclasses.replace(sc, seed=int(seed))
    lp = sc.leader_path
    if lp is None:
        lp = plan_leader_path(sc.leader_start, sc.leader_goal, sc.safe_set(), sc.bounds, sc.seed, dt=sc.dt,
                              iterations=sc.planner_iterations)
    return sc, lp


def _guard(fn):
    """Map library failures onto exit codes."""
    try:
        return fn()
    except ScenarioError as e:
        print(f"error: invalid scenario: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (PlanningFailure, InitialCommitFailure, GenerationFailure) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PLANNING


def cmd_run(scenario_path: str, method: str, out_dir: str, seed: Optional[int] = None) -> int:
    def body():
        sc, lp = _prepare(scenario_path, seed)
        m = run(sc, Method(method), leader=lp)
        write_outputs(Path(out_dir), m)
        s = m.summary()
        print(f"{m.method.value}: violations {s['violation_count']}, total deviation {s['total_deviation']:.6g}, "
              f"mean step {1e3 * s['step_wall_time_mean']:.3f} ms")
        return EXIT_UNSAFE if m.violation_count else EXIT_OK
    return _guard(body)


def format_table(results: dict) -> str:
    rows = [("method", "violations", "total deviation", "wall time [s]", "mean step [ms]")]
    for name, m in results.items():
        s = m.summary()
        rows.append((name, str(s["violation_count"]), f"{s['total_deviation']:.6g}",
                     f"{s['step_wall_time_total']:.3f}", f"{1e3 * s['step_wall_time_mean']:.3f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(wi) for c, wi in zip(r, widths)).rstrip() for r in rows]
    lines.append(PUBLISHED_CONTEXT)
    return "\n".join(lines) + "\n"


def cmd_compare(scenario_path: str, out_dir: str, seed: Optional[int] = None) -> int:
    def body():
        sc, lp = _prepare(scenario_path, seed)
        results = {}
        for method in (Method.GATEKEEPER, Method.CBF_QP):
            results[method.value] = run(sc, method, leader=lp)
        out = Path(out_dir)
        for name, m in results.items():
            write_outputs(out / name, m)
        table = format_table(results)
        (out / "summary.txt").write_text(table, encoding="utf-8")
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump({name: m.summary() for name, m in results.items()} | {"published_context": PUBLISHED_CONTEXT},
                      fh, indent=2)
            fh.write("\n")
        print(table, end="")
        return EXIT_UNSAFE if results[Method.GATEKEEPER.value].violation_count else EXIT_OK
    return _guard(body)


def cmd_gen_scenario(seed: int, n_zones: int, out_path: str, corridor_gap: float = 0.25) -> int:
    def body():
        if n_zones < 0:
            print("error: --n-zones must be >= 0", file=sys.stderr)
            return EXIT_INVALID
        text = dump_yaml(generate_scenario(seed, n_zones, corridor_gap=corridor_gap))
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        return EXIT_OK
    return _guard(body)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse would exit 2, which is reserved for safety violations
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gatekeep", description="Gatekeeper safety filter for Dubins formations.")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="simulate one method on a scenario")
    r.add_argument("scenario")
    r.add_argument("--method", choices=[m.value for m in Method], default=Method.GATEKEEPER.value)
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int, default=None, help="override the scenario's planner seed")
    c = sub.add_parser("compare", help="run both methods and print a summary table")
    c.add_argument("scenario")
    c.add_argument("--out", default="out")
    c.add_argument("--seed", type=int, default=None)
    g = sub.add_parser("gen-scenario", help="write a seeded random scenario file")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--n-zones", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--corridor-gap", type=float, default=0.25)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.cmd == "run":
        return cmd_run(args.scenario, args.method, args.out, args.seed)
    if args.cmd == "compare":
        return cmd_compare(args.scenario, args.out, args.seed)
    return cmd_gen_scenario(args.seed, args.n_zones, args.out, args.corridor_gap)


if __name__ == "__main__":
    sys.exit(main())
