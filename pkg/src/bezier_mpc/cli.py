"""Command-line entry point.

    bezier-mpc run SCENARIO [OUTDIR] [--set key=value ...] [--max-loops N] [--no-plots]
    bezier-mpc validate SCENARIO [--set key=value ...]
    bezier-mpc bench table1|table2|scaling [--out DIR] [--quick]

Exit codes: 0 success, 2 scenario error, 3 run failure (safety violation or
divergence). Output goes to OUTDIR when given, else to
``$BEZIER_MPC_OUTPUT_DIR/<scenario name>``, else to ``out/<scenario name>``.
``--set`` values are parsed as YAML scalars and take precedence over the file.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .mpc_task import InfeasibleGoalError
from .scenario import ScenarioConfig, ScenarioError, load_scenario
from .simulator import palms, run_closed_loop
from .trace import write_trace

OUTPUT_ENV = "BEZIER_MPC_OUTPUT_DIR"
EXIT_OK, EXIT_SCENARIO, EXIT_RUN = 0, 2, 3
FAILED_OUTCOMES = ("safety_violation", "diverged")

log = logging.getLogger("bezier_mpc")


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ScenarioError(f"override {item!r} is not of the form key=value")
        try:
            out[key.strip()] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"override {item!r}: {exc}") from exc
    return out


def output_dir(explicit, name: str) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ENV, "out")) / name


def validate(sc: ScenarioConfig) -> list[str]:
    """Problems that would stop a run before the first loop."""
    problems = []
    m = sc.model
    q = sc.start_q
    if np.any(q < m.q_min - 1e-9) or np.any(q > m.q_max + 1e-9):
        bad = [m.joints[i].name for i in np.flatnonzero((q < m.q_min - 1e-9) | (q > m.q_max + 1e-9))]
        problems.append(f"start configuration outside joint limits: {', '.join(bad)}")
    if sc.p_goal is not None:
        mid = 0.5 * (sc.p_goal[:3] + sc.p_goal[3:])
        for k, o in enumerate(sc.obstacles):
            if np.linalg.norm(mid - o.center) < sc.d_safe + o.radius:
                problems.append(f"goal midpoint within d_safe of obstacle {k}")
    p0, _ = palms(m, q)
    for k, o in enumerate(sc.obstacles):
        if np.linalg.norm(0.5 * (p0[:3] + p0[3:]) - o.center) < sc.d_safe + o.radius:
            problems.append(f"start midpoint within d_safe of obstacle {k}")
    return problems


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario, parse_overrides(args.set))
    problems = validate(sc)
    if problems:
        raise ScenarioError("; ".join(problems))
    outdir = output_dir(args.outdir, sc.name)
    try:
        trace = run_closed_loop(sc, max_loops=args.max_loops)
    except InfeasibleGoalError as exc:
        raise ScenarioError(str(exc)) from exc
    files = write_trace(trace, sc, outdir, plots=not args.no_plots)
    s = trace.summary
    print(f"{sc.name}: {trace.outcome} after {s['loops']} loops "
          f"(min clearance mid {_num(s['min_clearance_mid'])}, base {_num(s['min_clearance_base'])})")
    for kind, path in files.items():
        print(f"  {kind}: {path}")
    return EXIT_RUN if trace.outcome in FAILED_OUTCOMES else EXIT_OK


def _num(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario, parse_overrides(args.set))
    problems = validate(sc)
    if problems:
        raise ScenarioError("; ".join(problems))
    mode = "sine tracking" if sc.sine is not None else "goal reaching"
    print(f"{sc.name}: ok ({mode}, planner {sc.planner}, {len(sc.obstacles)} obstacles, "
          f"{len(sc.disturbances)} disturbances)")
    return EXIT_OK


def cmd_bench(args) -> int:
    from . import bench

    if args.suite == "table1":
        report = bench.bench_table1(steps=3 if args.quick else 10)
    elif args.suite == "table2":
        report = bench.bench_table2(duration=1.0 if args.quick else 4.0)
    else:
        report = bench.bench_scaling(loops=5 if args.quick else 25)
    outdir = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ENV, "out")) / "bench"
    path = report.write(outdir)
    print(report.format())
    print(f"report: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bezier-mpc", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one closed-loop scenario and write its trace")
    r.add_argument("scenario")
    r.add_argument("outdir", nargs="?", help=f"output directory (default: ${OUTPUT_ENV}/<name> or out/<name>)")
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a scenario field, e.g. wholebody.horizon=3 or planner=discretized")
    r.add_argument("--max-loops", type=int, default=None)
    r.add_argument("--no-plots", action="store_true", help="skip the SVG plots")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("scenario")
    v.add_argument("--set", action="append", metavar="KEY=VALUE")
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite", choices=("table1", "table2", "scaling"))
    b.add_argument("--out", help="report directory")
    b.add_argument("--quick", action="store_true", help="shorter runs, for smoke testing")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
