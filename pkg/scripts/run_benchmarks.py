"""Run the three benchmark suites and write their JSON reports.

    python3 scripts/run_benchmarks.py [OUTDIR] [--quick] [--suites table1 table2 scaling]
"""

import argparse
from pathlib import Path

from bezier_mpc import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("outdir", nargs="?", default="out/bench")
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--suites", nargs="*", default=["table1", "table2", "scaling"])
    args = ap.parse_args()
    runners = {
        "table1": lambda: bench.bench_table1(steps=3 if args.quick else 10),
        "table2": lambda: bench.bench_table2(duration=1.0 if args.quick else 4.0),
        "scaling": lambda: bench.bench_scaling(loops=5 if args.quick else 25),
    }
    for name in args.suites:
        report = runners[name]()
        path = report.write(Path(args.outdir))
        print(report.format())
        print(f"report: {path}\n", flush=True)


if __name__ == "__main__":
    main()
