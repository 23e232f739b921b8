"""Per-user Otsu thresholding of anomaly probabilities and evaluation metrics."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

N_BINS = 100


class DegenerateHistogram(ValueError):
    """Scores are constant or occupy fewer than two bins."""


@dataclass
class ProbHistogram:
    bins: np.ndarray  # normalized masses, length 100
    p_min: float
    p_max: float
    index: np.ndarray  # bin of every input score

    @property
    def degenerate(self) -> bool:
        return not self.p_max > self.p_min

    @property
    def occupied(self) -> int:
        return int(np.count_nonzero(self.bins))


def bin_index(p: np.ndarray, p_min: float, p_max: float) -> np.ndarray:
    """floor((p - min) / (max - min) * 100), with p == max clamped into the last bin."""
    k = np.floor((np.asarray(p) - p_min) / (p_max - p_min) * N_BINS).astype(np.int64)
    return np.clip(k, 0, N_BINS - 1)


def build_histogram(p: Sequence[float]) -> ProbHistogram:
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ValueError("need at least one score")
    lo, hi = float(p.min()), float(p.max())
    if not hi > lo:
        bins = np.zeros(N_BINS)
        bins[0] = 1.0
        return ProbHistogram(bins, lo, hi, np.zeros(p.size, dtype=np.int64))
    idx = bin_index(p, lo, hi)
    bins = np.bincount(idx, minlength=N_BINS) / p.size
    return ProbHistogram(bins, lo, hi, idx)


def otsu_threshold(h: ProbHistogram | np.ndarray) -> int:
    """Bin t maximizing w0 * w1 * (mu0 - mu1)^2 for classes {<= t} and {> t}.

    Thresholds leaving either class empty are skipped; ties go to the smallest t.
    """
    bins = h.bins if isinstance(h, ProbHistogram) else np.asarray(h, dtype=np.float64)
    if np.count_nonzero(bins) < 2:
        raise DegenerateHistogram("Otsu threshold needs at least two occupied bins")
    levels = np.arange(bins.size, dtype=np.float64)
    w0 = np.cumsum(bins)
    m0 = np.cumsum(levels * bins)
    total_w, total_m = w0[-1], m0[-1]
    best_t, best = -1, -np.inf
    for t in range(bins.size - 1):
        a, b = w0[t], total_w - w0[t]
        if a <= 0 or b <= 0 or bins[t + 1 :].sum() == 0:
            continue
        mu0 = m0[t] / a
        mu1 = (total_m - m0[t]) / b
        score = a * b * (mu0 - mu1) ** 2
        if score > best:
            best, best_t = score, t
    if best_t < 0:
        raise DegenerateHistogram("no threshold separates two non-empty classes")
    return best_t


def map_threshold(tau: float, p_min: float, p_max: float) -> float:
    """Map a bin-level threshold back to probability space."""
    return tau / N_BINS * (p_max - p_min) + p_min


def classify(p: Sequence[float], tau: float) -> np.ndarray:
    """1 where P_t >= tau (inclusive), else 0."""
    return (np.asarray(p, dtype=np.float64) >= tau).astype(np.int64)


def fallback_decisions(p: np.ndarray, fallback: float = 0.5) -> np.ndarray:
    return classify(p, fallback)


@dataclass
class UserThreshold:
    key: str
    threshold: float
    mode: str  # "otsu", "degenerate" or "guard"
    otsu_bin: int | None = None


def user_threshold(p: Sequence[float], key: str = "", fallback: float = 0.5,
                   guard: str = "straddle") -> UserThreshold:
    """Adaptive threshold for one user's score stream.

    The mapped threshold is the lower edge of the first bin above the Otsu split,
    so the bins Otsu assigned to the low class stay normal. Constant scores (or
    fewer than two occupied bins) use ``fallback``. With ``guard='straddle'`` a
    stream lying entirely on one side of ``fallback`` also uses the fallback.
    """
    p = np.asarray(p, dtype=np.float64)
    h = build_histogram(p)
    if h.degenerate or h.occupied < 2:
        return UserThreshold(key, fallback, "degenerate")
    if guard == "straddle" and (h.p_max < fallback or h.p_min >= fallback):
        return UserThreshold(key, fallback, "guard")
    t = otsu_threshold(h)
    return UserThreshold(key, map_threshold(t + 1, h.p_min, h.p_max), "otsu", t)


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    fpr: float
    tp: int
    fp: int
    tn: int
    fn: int
    undefined: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("precision", "recall", "f1", "fpr", "tp", "fp", "tn", "fn", "undefined")}


def metrics(decisions: Sequence[int], truth: Sequence[int]) -> Metrics:
    d = np.asarray(decisions, dtype=bool)
    y = np.asarray(truth, dtype=bool)
    if d.shape != y.shape:
        raise ValueError("decisions and truth must have equal length")
    tp = int(np.sum(d & y))
    fp = int(np.sum(d & ~y))
    tn = int(np.sum(~d & ~y))
    fn = int(np.sum(~d & y))
    undefined = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    fpr = ratio(fp, fp + tn, "fpr")
    if precision + recall == 0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(precision, recall, f1, fpr, tp, fp, tn, fn, undefined)


@dataclass
class StepRow:
    user: str
    day: str
    session_id: str
    step: int
    prob: float
    decision: int
    truth: int


@dataclass
class DetectionReport:
    thresholds: dict[str, UserThreshold]
    rows: list[StepRow]
    metrics: Metrics

    def to_json(self) -> dict:
        return {
            "metrics": self.metrics.as_dict(),
            "thresholds": {
                k: {"threshold": t.threshold, "mode": t.mode, "otsu_bin": t.otsu_bin}
                for k, t in sorted(self.thresholds.items())
            },
            "n_steps": len(self.rows),
        }

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        write_decisions(out_dir / "decisions.csv", self.rows)


def write_decisions(path: str | Path, rows: Sequence[StepRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "day", "session", "step", "prob", "decision", "truth"])
        for r in rows:
            w.writerow([r.user, r.day, r.session_id, r.step, repr(r.prob), r.decision, r.truth])


def read_decisions(path: str | Path) -> list[StepRow]:
    with open(path, newline="") as fh:
        return [
            StepRow(r["user"], r["day"], r["session"], int(r["step"]), float(r["prob"]),
                    int(r["decision"]), int(r["truth"]))
            for r in csv.DictReader(fh)
        ]


def detect(
    sessions: Sequence,
    probs: Sequence[np.ndarray],
    scope: str = "user",
    fallback: float = 0.5,
    guard: str = "straddle",
) -> DetectionReport:
    """Threshold each user's concatenated scores (or each user-day with ``scope='user_day'``)."""
    groups: dict[str, list[int]] = defaultdict(list)
    for i, s in enumerate(sessions):
        key = s.user_id if scope == "user" else f"{s.user_id}|{s.day.isoformat()}"
        groups[key].append(i)
    thresholds: dict[str, UserThreshold] = {}
    decided: dict[int, np.ndarray] = {}
    for key in sorted(groups):
        members = groups[key]
        stream = np.concatenate([probs[i] for i in members])
        th = user_threshold(stream, key, fallback, guard)
        thresholds[key] = th
        for i in members:
            decided[i] = classify(probs[i], th.threshold)
    rows = []
    for i, s in enumerate(sessions):
        for t, (pr, dec, y) in enumerate(zip(probs[i], decided[i], s.labels)):
            rows.append(StepRow(s.user_id, s.day.isoformat(), s.session_id, t, float(pr), int(dec), int(y)))
    m = metrics([r.decision for r in rows], [r.truth for r in rows])
    return DetectionReport(thresholds, rows, m)
