"""Run every scenario under scenarios/ and print one summary line each.

    python3 scripts/run_all_scenarios.py [OUTDIR] [--only NAME ...]
"""

import argparse
import json
from pathlib import Path

from bezier_mpc.scenario import load_scenario
from bezier_mpc.simulator import run_closed_loop
from bezier_mpc.trace import write_trace

ROOT = Path(__file__).resolve().parents[1]
KEYS = ("outcome", "loops", "min_clearance_mid", "min_clearance_base", "final_position_error",
        "final_orientation_error", "max_consistency", "peak_contact_force", "tracking_error",
        "max_task_violation", "max_wb_violation", "wb_nonconverged", "mean_wb_solve_time")


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("outdir", nargs="?", default="out/scenarios")
    ap.add_argument("--only", nargs="*", help="scenario names to run")
    args = ap.parse_args()
    for path in sorted((ROOT / "scenarios").glob("*.yaml")):
        if args.only and path.stem not in args.only:
            continue
        sc = load_scenario(path)
        trace = run_closed_loop(sc)
        write_trace(trace, sc, Path(args.outdir) / sc.name)
        s = {k: trace.summary.get(k) for k in KEYS if trace.summary.get(k) is not None}
        print(sc.name, json.dumps(s), flush=True)


if __name__ == "__main__":
    main()
