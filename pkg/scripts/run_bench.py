#!/usr/bin/env python3
"""Sweep N for the BEV-SSM block and the attention baseline; write a CSV.

    python3 scripts/run_bench.py --sweep 1024,4096,16384 --out bench.csv
"""

import argparse

from gmfuse.bench import DEFAULT_SWEEP, run_bench, validate_sweep, write_bench_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sweep", default=",".join(map(str, DEFAULT_SWEEP)))
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--d-state", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="bench.csv")
    args = ap.parse_args()

    sweep = validate_sweep(int(s) for s in args.sweep.split(","))
    records, slopes = run_bench(sweep, channels=args.channels, d_state=args.d_state, seed=args.seed, log=print)
    write_bench_csv(args.out, records, slopes, f"channels={args.channels}\nd_state={args.d_state}\nseed={args.seed}")
    for mech, s in slopes.items():
        print(f"log-log slope {mech}: {s:.3f}")


if __name__ == "__main__":
    main()
