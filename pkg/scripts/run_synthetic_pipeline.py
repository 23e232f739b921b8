"""End-to-end run on a generated corpus: gen -> featurize -> train -> detect -> eval.

    python3 scripts/run_synthetic_pipeline.py --workdir runs/syn50 --users 50 --days 60
"""

import argparse
import json
import time
from pathlib import Path

from insider_ssm.cli import main as cli


def run(argv: list[str]) -> None:
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"step failed ({code}): {' '.join(argv)}")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--workdir", default="runs/synthetic")
    ap.add_argument("--users", type=int, default=50)
    ap.add_argument("--days", type=int, default=60)
    ap.add_argument("--anomaly-frac", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--config", help="optional TOML/JSON config for featurize/train/detect")
    args = ap.parse_args()

    wd = Path(args.workdir)
    cfg = ["--config", args.config] if args.config else []
    t0 = time.perf_counter()
    run(["gen", "--users", str(args.users), "--days", str(args.days), "--anomaly-frac", str(args.anomaly_frac),
         "--seed", str(args.seed), "--out", str(wd / "logs")])
    run(["featurize", str(wd / "logs"), "--out", str(wd / "sessions.jsonl"), *cfg])
    run(["-v", "train", str(wd / "sessions.jsonl"), "--out", str(wd / "model"), *cfg])
    run(["detect", str(wd / "sessions.jsonl"), "--model", str(wd / "model" / "model.bin"),
         "--out", str(wd / "report"), *cfg])
    run(["eval", str(wd / "report" / "decisions.csv"), "--out", str(wd / "report" / "metrics.csv")])
    report = json.loads((wd / "report" / "report.json").read_text())
    print(json.dumps(report["metrics"], indent=2))
    print(f"wall time {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
