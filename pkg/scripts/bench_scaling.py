"""Encoder forward time versus sequence length, with doubling ratios.

    python3 scripts/bench_scaling.py --out scaling.csv
"""

import argparse
import csv

from insider_ssm.checks import encoder_scaling


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="scaling.csv")
    ap.add_argument("--lengths", default="256,512,1024,2048,4096")
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--d-model", type=int, default=64)
    args = ap.parse_args()

    rows = encoder_scaling([int(t) for t in args.lengths.split(",")], args.repeats, args.d_model)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "median_ms", "ratio_to_previous"])
        prev = None
        for T, ms in rows:
            ratio = ms / prev if prev else float("nan")
            w.writerow([T, f"{ms:.4f}", f"{ratio:.3f}"])
            print(f"T={T:<6} {ms:9.3f} ms   x{ratio:.2f}")
            prev = ms


if __name__ == "__main__":
    main()
