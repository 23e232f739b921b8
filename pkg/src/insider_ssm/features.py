"""Session featurization: behavior IDs, EWMA-smoothed gaps and 22 statistical features."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .config import ConfigError, FeatureConfig
from .logs import Channel, DeviceClass, LogEvent, Session

log = logging.getLogger(__name__)

N_BEHAVIORS = 24
N_DEVICES = 4
N_TIMESEGS = 2
N_IDS = N_BEHAVIORS * N_DEVICES * N_TIMESEGS  # 192

FILE_TYPES = ("zip", "doc", "pdf", "exe", "txt", "jpg")
EXTENSIONS = {
    "zip": "zip", "doc": "doc", "docx": "doc", "pdf": "pdf",
    "exe": "exe", "txt": "txt", "jpg": "jpg", "jpeg": "jpg",
}
WEB_CATEGORIES = ("cloud", "hacktivist", "job", "neutral")

FACTORS = (
    "logon", "device", "file", "email", "web",
    "personal", "department", "supervisor", "other",
    "working", "non_working",
)
STAT_NAMES = tuple(f"{f}_{info}" for f in FACTORS for info in ("count", "duration"))
N_STATS = len(STAT_NAMES)  # 22


@dataclass(frozen=True)
class EncodingSpace:
    work_start_hour: int = 8
    work_end_hour: int = 18
    timezone: str = "UTC"
    internal_domains: tuple[str, ...] = ("dtaa.com",)

    n_behaviors: int = N_BEHAVIORS
    n_devices: int = N_DEVICES
    n_timesegs: int = N_TIMESEGS

    @classmethod
    def from_config(cls, cfg: FeatureConfig) -> "EncodingSpace":
        return cls(cfg.work_start_hour, cfg.work_end_hour, cfg.timezone, cfg.internal_domains)

    def time_segment(self, ts: int) -> int:
        """1 inside working hours, 2 outside."""
        hour = datetime.fromtimestamp(ts, tz=ZoneInfo(self.timezone)).hour
        return 1 if self.work_start_hour <= hour < self.work_end_hour else 2

    def is_internal(self, address: str) -> bool:
        domain = address.rsplit("@", 1)[-1].strip().lower()
        return any(domain == d or domain.endswith("." + d) for d in self.internal_domains)


def _file_type(filename: str) -> str:
    ext = filename.rsplit(".", 1)[-1].lower() if "." in filename else ""
    return EXTENSIONS.get(ext, "txt")


def behavior_code(event: LogEvent, space: EncodingSpace) -> int:
    """Behavior type B in [0, 23]. Unknown subtypes fall back to benign codes."""
    ch = event.channel
    if ch is Channel.LOGON:
        return 0 if event.action == "logon" else 1
    if ch is Channel.DEVICE:
        return 2 if event.action == "connect" else 3
    if ch is Channel.FILE:
        filename = event.fields[0]
        op = 1 if event.action == "write" else 0
        return 4 + op * len(FILE_TYPES) + FILE_TYPES.index(_file_type(filename))
    if ch is Channel.EMAIL:
        to, sender = event.fields[0], event.fields[1]
        recipients = [r for r in to.split(";") if r.strip()]
        s_ext = not space.is_internal(sender)
        r_ext = any(not space.is_internal(r) for r in recipients)
        return 16 + 2 * s_ext + r_ext
    category = event.fields[1].strip().lower()
    if category not in WEB_CATEGORIES:
        category = "neutral"
    return 20 + WEB_CATEGORIES.index(category)


def encode_triple(b: int, d: int, ts: int) -> int:
    """Behavior ID = B * (N_D * N_TS) + D * N_TS + TS, giving 1..192."""
    if not (0 <= b < N_BEHAVIORS and 0 <= d < N_DEVICES and ts in (1, 2)):
        raise ValueError(f"invalid triple (B={b}, D={d}, TS={ts})")
    return b * (N_DEVICES * N_TIMESEGS) + d * N_TIMESEGS + ts


def decode_id(bid: int) -> tuple[int, int, int]:
    if not 1 <= bid <= N_IDS:
        raise ValueError(f"behavior id {bid} outside [1, {N_IDS}]")
    ts = (bid - 1) % N_TIMESEGS + 1
    rest = (bid - ts) // N_TIMESEGS
    return rest // N_DEVICES, rest % N_DEVICES, ts


def encode_behavior(event: LogEvent, space: EncodingSpace) -> int:
    return encode_triple(
        behavior_code(event, space), int(event.device_class), space.time_segment(event.timestamp)
    )


def interval_sequence(
    timestamps: Sequence[float], alpha: float = 0.2, start: float | None = None
) -> tuple[np.ndarray, int]:
    """EWMA of inter-event gaps with c_0 = 0; returns (c_1..c_T, number of clamped gaps).

    ``start`` is the session start time t_0; it defaults to the first timestamp.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    t = np.asarray(timestamps, dtype=np.float64)
    if t.size == 0:
        raise ValueError("need at least one timestamp")
    t0 = t[0] if start is None else float(start)
    gaps = np.diff(t, prepend=t0)
    skew = int(np.sum(gaps < 0))
    if skew:
        log.warning("clamped %d negative inter-event gaps to zero", skew)
        gaps = np.maximum(gaps, 0.0)
    out = np.empty_like(gaps)
    c = 0.0
    for i, g in enumerate(gaps):
        c = alpha * g + (1.0 - alpha) * c
        out[i] = c
    return out, skew


def _factor_masks(events: Sequence[LogEvent], space: EncodingSpace) -> list[list[bool]]:
    channels = [Channel.LOGON, Channel.DEVICE, Channel.FILE, Channel.EMAIL, Channel.HTTP]
    segs = [space.time_segment(e.timestamp) for e in events]
    masks = [[e.channel is ch for e in events] for ch in channels]
    masks += [[e.device_class == d for e in events] for d in DeviceClass]
    masks += [[s == 1 for s in segs], [s == 2 for s in segs]]
    return masks


def statistical_features(session: Session, space: EncodingSpace) -> np.ndarray:
    """Raw (unstandardized) [count, duration] per factor; duration is the time span
    between the first and last matching event."""
    ts = np.array([e.timestamp for e in session.events], dtype=np.float64)
    out = np.zeros(N_STATS)
    for k, mask in enumerate(_factor_masks(session.events, space)):
        sel = ts[np.asarray(mask, dtype=bool)]
        out[2 * k] = sel.size
        out[2 * k + 1] = sel.max() - sel.min() if sel.size >= 2 else 0.0
    return out


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def standardize(x_raw: np.ndarray | Sequence[Sequence[float]], floor: float = 1e-6) -> Standardizer:
    """Fit a per-dimension z-score on training vectors; std is floored at ``floor``."""
    x = np.asarray(x_raw, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigError("standardization needs at least two training vectors")
    return Standardizer(x.mean(axis=0), np.maximum(x.std(axis=0), floor))


@dataclass
class FeaturizedSession:
    session_id: str
    user_id: str
    day: date
    s_b: np.ndarray  # int, values in 1..192
    s_c: np.ndarray  # smoothed gaps, seconds
    x_raw: np.ndarray  # 22 raw statistics
    labels: np.ndarray  # int 0/1

    def __post_init__(self):
        self.s_b = np.asarray(self.s_b, dtype=np.int64)
        self.s_c = np.asarray(self.s_c, dtype=np.float64)
        self.x_raw = np.asarray(self.x_raw, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.s_b)
        if n < 1 or len(self.s_c) != n or len(self.labels) != n:
            raise ValueError(f"{self.session_id}: sequence lengths disagree or are empty")
        if self.s_b.min() < 1 or self.s_b.max() > N_IDS:
            raise ValueError(f"{self.session_id}: behavior id outside [1, {N_IDS}]")
        if np.any(self.s_c < 0) or not np.all(np.isfinite(self.s_c)):
            raise ValueError(f"{self.session_id}: interval sequence must be finite and >= 0")
        if self.x_raw.shape != (N_STATS,):
            raise ValueError(f"{self.session_id}: expected {N_STATS} statistics")

    def __len__(self) -> int:
        return len(self.s_b)

    @property
    def anomalous(self) -> bool:
        return bool(self.labels.any())

    def to_json(self) -> str:
        return json.dumps(
            {
                "session_id": self.session_id,
                "user_id": self.user_id,
                "day": self.day.isoformat(),
                "s_b": self.s_b.tolist(),
                "s_c": self.s_c.tolist(),
                "x_raw": self.x_raw.tolist(),
                "labels": self.labels.tolist(),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "FeaturizedSession":
        d = json.loads(line)
        return cls(
            d["session_id"], d["user_id"], date.fromisoformat(d["day"]),
            d["s_b"], d["s_c"], d["x_raw"], d["labels"],
        )


def featurize_session(session: Session, space: EncodingSpace, alpha: float = 0.2) -> FeaturizedSession:
    s_b = [encode_behavior(e, space) for e in session.events]
    s_c, _ = interval_sequence([e.timestamp for e in session.events], alpha)
    return FeaturizedSession(
        session.session_id, session.user_id, session.day, s_b, s_c,
        statistical_features(session, space), session.labels,
    )


def featurize_all(sessions: Iterable[Session], cfg: FeatureConfig | None = None) -> list[FeaturizedSession]:
    cfg = cfg or FeatureConfig()
    space = EncodingSpace.from_config(cfg)
    return [featurize_session(s, space, cfg.alpha) for s in sessions]


def write_jsonl(path: str | Path, sessions: Iterable[FeaturizedSession]) -> int:
    n = 0
    with open(path, "w") as fh:
        for s in sessions:
            fh.write(s.to_json() + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[FeaturizedSession]:
    with open(path) as fh:
        return [FeaturizedSession.from_json(line) for line in fh if line.strip()]
