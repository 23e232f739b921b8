"""CERT-style multi-source CSV ingestion and daily sessionization."""

from __future__ import annotations

import csv
import enum
import io
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence
from zoneinfo import ZoneInfo

log = logging.getLogger(__name__)

DATE_FMT = "%m/%d/%Y %H:%M:%S"


class Channel(str, enum.Enum):
    LOGON = "logon"
    DEVICE = "device"
    FILE = "file"
    EMAIL = "email"
    HTTP = "http"


class DeviceClass(enum.IntEnum):
    PERSONAL = 0
    DEPARTMENT = 1
    SUPERVISOR = 2
    OTHER = 3


# Column layout after the shared ``id,date,user,pc`` prefix.
SCHEMAS: dict[Channel, tuple[str, ...]] = {
    Channel.LOGON: ("id", "date", "user", "pc", "activity"),
    Channel.DEVICE: ("id", "date", "user", "pc", "activity"),
    Channel.FILE: ("id", "date", "user", "pc", "filename", "activity"),
    Channel.EMAIL: ("id", "date", "user", "pc", "to", "from", "activity"),
    Channel.HTTP: ("id", "date", "user", "pc", "url", "category"),
}

# Accepted activity tokens per channel, normalized to a lowercase action.
ACTIONS: dict[Channel, dict[str, str]] = {
    Channel.LOGON: {"Logon": "logon", "Logoff": "logoff"},
    Channel.DEVICE: {"Connect": "connect", "Disconnect": "disconnect"},
    Channel.FILE: {"File Open": "open", "File Write": "write", "File Copy": "write"},
    Channel.EMAIL: {"Send": "send", "View": "view"},
}

DEVICE_TOKENS = {c.name.capitalize(): c for c in DeviceClass}


class IngestError(OSError):
    """Fatal: a log file could not be read or has the wrong header."""


@dataclass(frozen=True)
class ParseIssue:
    path: str
    line: int
    message: str

    def __str__(self) -> str:
        return f"{self.path}:{self.line}: {self.message}"


@dataclass(frozen=True)
class LogEvent:
    """One normalized record; ``fields`` keeps the channel columns verbatim."""

    event_id: str
    user_id: str
    timestamp: int
    channel: Channel
    pc: str
    action: str
    fields: tuple[str, ...]
    device_class: DeviceClass = DeviceClass.OTHER
    label: int = 0

    def __post_init__(self):
        if not (self.timestamp > 0):
            raise ValueError(f"event {self.event_id}: timestamp must be positive")
        if self.label not in (0, 1):
            raise ValueError(f"event {self.event_id}: label must be 0 or 1")

    @property
    def detail(self) -> dict[str, str]:
        return dict(zip(SCHEMAS[self.channel][4:], self.fields))


@dataclass(frozen=True)
class Session:
    user_id: str
    day: date
    events: tuple[LogEvent, ...]
    chunk: int = 0

    def __post_init__(self):
        if not self.events:
            raise ValueError("session must contain at least one event")
        ts = [e.timestamp for e in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("session events must be time-ordered")
        if any(e.user_id != self.user_id for e in self.events):
            raise ValueError("session mixes users")

    @property
    def labels(self) -> list[int]:
        return [e.label for e in self.events]

    @property
    def session_id(self) -> str:
        return f"{self.user_id}|{self.day.isoformat()}|{self.chunk}"

    def __len__(self) -> int:
        return len(self.events)


def parse_date(text: str) -> int:
    dt = datetime.strptime(text, DATE_FMT).replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_date(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime(DATE_FMT)


def _parse_row(
    row: list[str],
    channel: Channel,
    device_map: dict[str, DeviceClass] | None,
    labels: set[str] | None,
) -> LogEvent:
    schema = SCHEMAS[channel]
    if len(row) != len(schema):
        raise ValueError(f"expected {len(schema)} columns, got {len(row)}")
    event_id, date_text, user, pc, *rest = row
    try:
        ts = parse_date(date_text)
    except ValueError:
        raise ValueError(f"malformed timestamp {date_text!r}") from None
    if not user:
        raise ValueError("empty user field")
    if channel is Channel.HTTP:
        action = "visit"
    else:
        token = rest[-1]
        try:
            action = ACTIONS[channel][token]
        except KeyError:
            raise ValueError(f"unknown {channel.value} activity {token!r}") from None
    dclass = (device_map or {}).get(pc, DeviceClass.OTHER)
    label = int(labels is not None and event_id in labels)
    return LogEvent(event_id, user, ts, channel, pc, action, tuple(rest), dclass, label)


def parse_channel_file(
    path: str | Path,
    channel: Channel | str,
    device_map: dict[str, DeviceClass] | None = None,
    labels: set[str] | None = None,
) -> tuple[list[LogEvent], list[ParseIssue]]:
    """Parse one channel CSV. Malformed rows are reported with their line number and skipped."""
    channel = Channel(channel)
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    events: list[LogEvent] = []
    issues: list[ParseIssue] = []
    if not text:
        return events, issues
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return events, issues
    if tuple(header) != SCHEMAS[channel]:
        raise IngestError(f"{path}: header {header} does not match {list(SCHEMAS[channel])}")
    for row in reader:
        if not row:
            continue
        try:
            events.append(_parse_row(row, channel, device_map, labels))
        except ValueError as exc:
            issues.append(ParseIssue(str(path), reader.line_num, str(exc)))
    return events, issues


def serialize_events(events: Iterable[LogEvent], channel: Channel | str) -> str:
    """Inverse of :func:`parse_channel_file` for one channel."""
    channel = Channel(channel)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCHEMAS[channel])
    for e in events:
        writer.writerow([e.event_id, format_date(e.timestamp), e.user_id, e.pc, *e.fields])
    return buf.getvalue()


def read_device_map(path: str | Path) -> dict[str, DeviceClass]:
    """``devices.csv`` with header ``pc,class``; class is Personal/Department/Supervisor/Other."""
    out: dict[str, DeviceClass] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                out[row["pc"]] = DEVICE_TOKENS[row["class"]]
            except KeyError:
                raise IngestError(f"{path}: bad device row {row}") from None
    return out


def read_answers(path: str | Path) -> set[str]:
    return {line.strip() for line in Path(path).read_text().splitlines() if line.strip()}


def infer_personal_devices(events: Sequence[LogEvent]) -> list[LogEvent]:
    """Fallback without a device map: each user's most-used PC is Personal, the rest Other."""
    usage: dict[str, Counter] = defaultdict(Counter)
    for e in events:
        usage[e.user_id][e.pc] += 1
    personal = {u: max(sorted(c), key=c.__getitem__) for u, c in usage.items()}
    out = []
    for e in events:
        dclass = DeviceClass.PERSONAL if personal[e.user_id] == e.pc else DeviceClass.OTHER
        out.append(replace(e, device_class=dclass))
    return out


@dataclass
class Corpus:
    events: list[LogEvent]
    issues: list[ParseIssue] = field(default_factory=list)
    unknown_devices: int = 0


def load_corpus(directory: str | Path) -> Corpus:
    """Read all five channel files (missing channels are skipped) plus optional
    ``devices.csv`` and ``answers.txt``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestError(f"{directory} is not a directory")
    devices_path = directory / "devices.csv"
    device_map = read_device_map(devices_path) if devices_path.exists() else None
    answers_path = directory / "answers.txt"
    labels = read_answers(answers_path) if answers_path.exists() else set()

    events: list[LogEvent] = []
    issues: list[ParseIssue] = []
    for channel in Channel:
        path = directory / f"{channel.value}.csv"
        if not path.exists():
            continue
        evs, errs = parse_channel_file(path, channel, device_map, labels)
        events.extend(evs)
        issues.extend(errs)
    unknown = 0
    if device_map is None:
        events = infer_personal_devices(events)
    else:
        unknown = sum(1 for e in events if e.pc not in device_map)
        if unknown:
            log.warning("%d events on PCs missing from devices.csv were coded as Other", unknown)
    for issue in issues:
        log.warning("skipped row %s", issue)
    return Corpus(events, issues, unknown)


def sessionize(events: Iterable[LogEvent], tz: str = "UTC", t_max: int = 512) -> list[Session]:
    """Group events into (user, local calendar day) sessions of at most ``t_max`` events."""
    if t_max < 1:
        raise ValueError("t_max must be positive")
    zone = ZoneInfo(tz)
    groups: dict[tuple[str, date], list[LogEvent]] = defaultdict(list)
    for e in events:
        day = datetime.fromtimestamp(e.timestamp, tz=zone).date()
        groups[(e.user_id, day)].append(e)
    sessions = []
    for (user, day) in sorted(groups):
        evs = sorted(groups[(user, day)], key=lambda e: e.timestamp)
        for chunk, start in enumerate(range(0, len(evs), t_max)):
            sessions.append(Session(user, day, tuple(evs[start : start + t_max]), chunk))
    return sessions
