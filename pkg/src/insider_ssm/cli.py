"""Command-line entry point: gen, featurize, train, detect, eval, gradcheck, bench."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import Config, ConfigError, load_config
from .detection import detect, metrics, read_decisions
from .features import featurize_all, read_jsonl, write_jsonl
from .logs import IngestError, load_corpus, sessionize
from .model import Detector
from .synth import ScenarioSpec, generate
from .tensor import ShapeError

log = logging.getLogger("insider_ssm")


class CliError(RuntimeError):
    pass


def _config(args) -> Config:
    return load_config(args.config) if getattr(args, "config", None) else Config()


def cmd_gen(args) -> None:
    spec = ScenarioSpec(
        n_users=args.users, days=args.days, anomaly_frac=args.anomaly_frac, seed=args.seed,
        events_per_day=args.events_per_day,
    )
    counts = generate(spec, args.out)
    print(f"wrote {sum(counts.values())} rows to {args.out}")


def cmd_featurize(args) -> None:
    cfg = _config(args)
    corpus = load_corpus(args.logs)
    sessions = sessionize(corpus.events, cfg.features.timezone, cfg.features.t_max)
    featurized = featurize_all(sessions, cfg.features)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    n = write_jsonl(args.out, featurized)
    print(f"{len(corpus.events)} events, {len(corpus.issues)} parse issues, "
          f"{corpus.unknown_devices} unknown devices -> {n} sessions in {args.out}")


def cmd_train(args) -> None:
    from .training import train, write_history

    cfg = _config(args)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    sessions = read_jsonl(args.sessions)
    result = train(sessions, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.detector.save(out / "model.bin")
    write_history(out / "history.csv", result.history)
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs, final loss {last.total:.5f}; "
          f"model at {out / 'model.bin'}")


def cmd_detect(args) -> None:
    cfg = _config(args)
    model = Path(args.model)
    if not model.is_file():
        raise CliError(f"model file not found: {model}")
    detector = Detector.load(model)
    sessions = read_jsonl(args.sessions)
    if not args.all_sessions:
        wanted = set(detector.meta.get("test_ids", []))
        sessions = [s for s in sessions if s.session_id in wanted]
        if not sessions:
            raise CliError("no held-out sessions from the model's split are present; use --all-sessions")
    probs = detector.score(sessions)
    dc = cfg.detect
    scope = args.scope or dc.threshold_scope
    report = detect(sessions, probs, scope, dc.fallback, dc.guard)
    report.write(args.out)
    m = report.metrics
    print(f"precision={m.precision:.4f} recall={m.recall:.4f} f1={m.f1:.4f} fpr={m.fpr:.4f} "
          f"({len(report.rows)} steps) -> {args.out}")


def cmd_eval(args) -> None:
    rows = read_decisions(args.decisions)
    if not rows:
        raise CliError(f"no decisions in {args.decisions}")
    m = metrics([r.decision for r in rows], [r.truth for r in rows])
    table = [("precision", m.precision), ("recall", m.recall), ("f1", m.f1), ("fpr", m.fpr),
             ("tp", m.tp), ("fp", m.fp), ("tn", m.tn), ("fn", m.fn)]
    for name, value in table:
        print(f"{name:<10}{value:.4f}" if isinstance(value, float) else f"{name:<10}{value}")
    if m.undefined:
        print("undefined (empty denominator): " + ", ".join(m.undefined))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            w.writerows(table)


def cmd_gradcheck(args) -> None:
    from .checks import gradient_suite

    results = gradient_suite(seed=args.seed)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{status:<5}{r.name:<28}max_rel_err={r.report.max_rel_err:.2e} ({r.report.n_checked} coords)")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CliError("gradient check failed: " + ", ".join(failed))


def cmd_bench(args) -> None:
    from .checks import encoder_scaling

    lengths = [int(t) for t in args.lengths.split(",")]
    rows = encoder_scaling(lengths, args.repeats, args.d_model, seed=args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "median_ms"])
        for T, ms in rows:
            w.writerow([T, f"{ms:.4f}"])
            print(f"T={T:<6} median_ms={ms:.3f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="insider-ssm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic CERT-style corpus")
    g.add_argument("--users", type=int, default=20)
    g.add_argument("--days", type=int, default=30)
    g.add_argument("--anomaly-frac", type=float, default=0.1)
    g.add_argument("--events-per-day", type=float, default=16.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("featurize", help="CSV logs -> JSONL sessions")
    f.add_argument("logs", help="directory holding the channel CSVs")
    f.add_argument("--out", required=True)
    f.add_argument("--config")
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", help="JSONL sessions -> model.bin + history.csv")
    t.add_argument("sessions")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="score sessions and apply per-user thresholds")
    d.add_argument("sessions")
    d.add_argument("--model", required=True)
    d.add_argument("--out", required=True, help="directory for report.json and decisions.csv")
    d.add_argument("--config")
    d.add_argument("--scope", choices=("user", "user_day"))
    d.add_argument("--all-sessions", action="store_true",
                   help="score every session instead of the model's held-out split")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="metrics table from decisions.csv")
    e.add_argument("decisions")
    e.add_argument("--out", help="optional CSV output")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference checks of every layer")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="encoder runtime versus sequence length")
    b.add_argument("--out", default="scaling.csv")
    b.add_argument("--lengths", default="256,512,1024,2048")
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--d-model", type=int, default=64)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, ConfigError, IngestError, ShapeError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"insider-ssm {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
