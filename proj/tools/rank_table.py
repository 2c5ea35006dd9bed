#!/usr/bin/env python3
"""Pretty-print an eval.csv as a ranked metric table.

Rows are grouped by (scenario, ps_spec) and sorted by R^2 descending, the
ordering used to compare how well each balance metric tracks bias. Reads the
file produced by `balancegauge evaluate`.
"""
import argparse
import csv
import sys
from collections import defaultdict


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("eval_csv", help="eval.csv written by `balancegauge evaluate`")
    ap.add_argument("--intercept-alert", type=float, default=0.1,
                    help="flag |intercept| above this level (default 0.1)")
    args = ap.parse_args()

    groups = defaultdict(list)
    with open(args.eval_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"scenario", "ps_spec", "metric", "r2", "intercept"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            print(f"error: {args.eval_csv} is not an eval.csv", file=sys.stderr)
            return 2
        for row in reader:
            groups[(row["scenario"], row["ps_spec"])].append(row)

    for (scenario, spec), rows in sorted(groups.items()):
        rows.sort(key=lambda r: (-float(r["r2"]), abs(float(r["intercept"]))))
        print(f"scenario {scenario}, {spec} PS specification")
        print(f"  {'metric':<6} {'R^2':>8} {'intercept':>10}")
        for row in rows:
            alert = "  [intercept alert]" if abs(
                float(row["intercept"])) > args.intercept_alert else ""
            print(f"  {row['metric']:<6} {float(row['r2']):>8.3f} "
                  f"{float(row['intercept']):>10.3f}{alert}")
        print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
