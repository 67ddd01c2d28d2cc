#!/usr/bin/env python3
"""Compare a run's summary.csv against reference mean PCCs.

The reference file is a CSV with columns
    domain,model,lag_ms,window_ms,axis,pcc
(axis is x, y or z). Each matching cell is reported with its difference and
whether it falls inside the tolerance band. Advisory only: the exit status is
0 unless --strict is given and some cell falls outside the band.
"""

import argparse
import csv
import sys


def load_summary(path):
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            for axis in "xyz":
                key = (row["domain"], row["model"], int(row["lag_ms"]), int(row["window_ms"]), axis)
                out[key] = float(row[f"mean_pcc_{axis}"])
    return out


def load_reference(path):
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            key = (row["domain"], row["model"], int(row["lag_ms"]), int(row["window_ms"]), row["axis"])
            out[key] = float(row["pcc"])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("summary", help="summary.csv written by esigal run/report")
    ap.add_argument("reference", help="reference CSV (domain,model,lag_ms,window_ms,axis,pcc)")
    ap.add_argument("--band", type=float, default=0.05, help="tolerance on |run - reference| (default 0.05)")
    ap.add_argument("--strict", action="store_true", help="exit 1 if any cell is outside the band")
    args = ap.parse_args()

    run = load_summary(args.summary)
    ref = load_reference(args.reference)
    outside = missing = 0
    print(f"{'domain':8} {'model':16} {'lag':>4} {'win':>4} axis {'run':>7} {'ref':>7} {'diff':>7}  status")
    for key in sorted(ref):
        domain, model, lag, win, axis = key
        if key not in run:
            missing += 1
            print(f"{domain:8} {model:16} {lag:4d} {win:4d} {axis:4} {'-':>7} {ref[key]:7.3f} {'-':>7}  missing")
            continue
        diff = run[key] - ref[key]
        ok = abs(diff) <= args.band
        outside += not ok
        print(f"{domain:8} {model:16} {lag:4d} {win:4d} {axis:4} {run[key]:7.3f} {ref[key]:7.3f} {diff:+7.3f}  "
              f"{'ok' if ok else 'outside'}")
    print(f"{len(ref) - missing} compared, {outside} outside +/-{args.band:g}, {missing} missing from the run")
    return 1 if args.strict and outside else 0


if __name__ == "__main__":
    sys.exit(main())
