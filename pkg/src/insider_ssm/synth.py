"""Synthetic CERT-style corpus with planted insider-threat patterns.

Writes ``logon.csv``, ``device.csv``, ``file.csv``, ``email.csv``, ``http.csv``
(the ingest schemas), ``answers.txt`` (ids of planted events), ``devices.csv``
(``pc,class``) and ``scenario.json``. Output is byte-identical for a given spec.
"""

from __future__ import annotations

import csv
import json
import string
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .logs import SCHEMAS, Channel, format_date

PATTERNS = ("off_hours_burst", "device_hopping", "exfil_email")
DOMAIN = "dtaa.com"
EXTERNAL_DOMAINS = ("gmail.com", "yahoo.com", "hotmail.com", "comcast.net", "aol.com")
SITES = {
    "cloud": ("dropbox.com", "drive.google.com", "box.com", "mega.nz"),
    "hacktivist": ("wikileaks.org", "anonnews.org"),
    "job": ("monster.com", "indeed.com", "careerbuilder.com", "linkedin.com/jobs"),
    "neutral": ("cnn.com", "bbc.co.uk", "espn.com", "weather.com", "amazon.com",
                "wikipedia.org", "nytimes.com", "reddit.com"),
}
FILE_WORDS = ("report", "budget", "notes", "plan", "minutes", "design", "photo", "invoice", "memo")


@dataclass
class ScenarioSpec:
    n_users: int = 20
    days: int = 30
    events_per_day: float = 16.0  # Poisson mean of benign events per user-day
    anomaly_frac: float = 0.1
    anomaly_day_frac: float = 0.1  # fraction of an insider's days carrying a planted pattern
    patterns: tuple[str, ...] = PATTERNS
    seed: int = 0
    start: str = "2010-01-04"
    users_per_department: int = 10
    evening_prob: float = 0.08  # benign after-hours sessions

    def __post_init__(self):
        if not 0.0 <= self.anomaly_frac <= 0.5:
            raise ValueError("anomaly fraction must lie in [0, 0.5]")
        if self.n_users < 1 or self.days < 1:
            raise ValueError("need at least one user and one day")
        bad = set(self.patterns) - set(PATTERNS)
        if bad or not self.patterns:
            raise ValueError(f"unknown patterns {sorted(bad)}; choose from {PATTERNS}")
        self.patterns = tuple(self.patterns)


@dataclass
class _Row:
    ts: int
    channel: Channel
    user: str
    pc: str
    fields: tuple[str, ...]
    label: int = 0
    event_id: str = ""


@dataclass
class _User:
    uid: str
    index: int
    personal: str
    department: str
    supervisor: str
    insider: bool = False
    pattern: str | None = None
    anomaly_days: set[int] = field(default_factory=set)

    @property
    def email(self) -> str:
        return f"{self.uid.lower()}@{DOMAIN}"


def _user_ids(rng: np.random.Generator, n: int) -> list[str]:
    letters = np.array(list(string.ascii_uppercase))
    seen: set[str] = set()
    out = []
    while len(out) < n:
        uid = "".join(rng.choice(letters, 3)) + f"{int(rng.integers(10000)):04d}"
        if uid not in seen:
            seen.add(uid)
            out.append(uid)
    return out


class _DayWriter:
    """Accumulates one user's events with per-user RNG and id counter."""

    def __init__(self, user: _User, rng: np.random.Generator, others: list[str], colleagues: list[str],
                 evening_prob: float):
        self.user, self.rng = user, rng
        self.evening_prob = evening_prob
        self.others, self.colleagues = others, colleagues
        self.rows: list[_Row] = []

    def at(self, day0: int, hour: float) -> int:
        return day0 + int(round(hour * 3600))

    def add(self, ts: int, channel: Channel, pc: str, fields: tuple[str, ...], label: int = 0) -> None:
        self.rows.append(_Row(ts, channel, self.user.uid, pc, fields, label))

    def pick(self, options, probs=None):
        return options[int(self.rng.choice(len(options), p=probs))]

    # benign activities ----------------------------------------------------
    def file_event(self, ts, pc, label=0, write=None, ext=None):
        ext = ext or self.pick(("doc", "pdf", "txt", "jpg", "zip", "exe"), (0.38, 0.25, 0.2, 0.12, 0.04, 0.01))
        if write is None:
            write = self.rng.random() < 0.3
        name = f"C:\\{self.pick(FILE_WORDS)}_{int(self.rng.integers(1000)):03d}.{ext}"
        self.add(ts, Channel.FILE, pc, (name, "File Write" if write else "File Open"), label)

    def email_event(self, ts, pc, label=0, kind=None):
        kind = kind or self.pick(("II", "IE", "EI", "EE"), (0.74, 0.14, 0.09, 0.03))
        me = self.user.email
        colleague = f"{self.pick(self.colleagues).lower()}@{DOMAIN}"
        outsider = f"{self.pick(('info', 'sales', 'friend', 'contact'))}{int(self.rng.integers(100))}@{self.pick(EXTERNAL_DOMAINS)}"
        if kind == "II":
            self.add(ts, Channel.EMAIL, pc, (colleague, me, "Send"), label)
        elif kind == "IE":
            self.add(ts, Channel.EMAIL, pc, (outsider, me, "Send"), label)
        elif kind == "EI":
            self.add(ts, Channel.EMAIL, pc, (me, outsider, "View"), label)
        else:  # external list traffic the user is copied on through a personal address
            other = f"list{int(self.rng.integers(100))}@{self.pick(EXTERNAL_DOMAINS)}"
            self.add(ts, Channel.EMAIL, pc, (other, outsider, "View"), label)

    def http_event(self, ts, pc, label=0, category=None):
        category = category or self.pick(("neutral", "job", "cloud", "hacktivist"), (0.86, 0.05, 0.08, 0.01))
        site = self.pick(SITES[category])
        url = f"http://{site}/{self.pick(FILE_WORDS)}/{int(self.rng.integers(10000))}"
        self.add(ts, Channel.HTTP, pc, (url, category), label)

    def busy_block(self, day0, start_h, end_h, n, pc, label=0):
        hours = np.sort(self.rng.uniform(start_h, end_h, size=n))
        usb_open = False
        for h in hours:
            ts = self.at(day0, h)
            r = self.rng.random()
            if r < 0.38:
                self.file_event(ts, pc, label)
            elif r < 0.62:
                self.email_event(ts, pc, label)
            elif r < 0.96:
                self.http_event(ts, pc, label)
            else:
                self.add(ts, Channel.DEVICE, pc, ("Disconnect" if usb_open else "Connect",), label)
                usb_open = not usb_open
        if usb_open:
            self.add(self.at(day0, end_h), Channel.DEVICE, pc, ("Disconnect",), label)

    def benign_day(self, day0: int, n_events: int) -> None:
        u = self.user
        pc = u.personal if self.rng.random() < 0.9 else u.department
        start = self.rng.uniform(7.6, 9.2)
        end = self.rng.uniform(16.5, 17.8)
        self.add(self.at(day0, start), Channel.LOGON, pc, ("Logon",))
        self.busy_block(day0, start + 0.05, end - 0.05, n_events, pc)
        self.add(self.at(day0, end), Channel.LOGON, pc, ("Logoff",))
        if self.rng.random() < 0.15:
            # a short visit to a shared machine; never an unassigned one, which is the hopping signature
            shared = u.department if self.rng.random() < 0.7 else u.supervisor
            h = self.rng.uniform(10.0, 15.0)
            self.add(self.at(day0, h), Channel.LOGON, shared, ("Logon",))
            self.busy_block(day0, h + 0.05, h + 0.25, int(self.rng.integers(1, 4)), shared)
            self.add(self.at(day0, h + 0.3), Channel.LOGON, shared, ("Logoff",))
        if self.rng.random() < self.evening_prob:
            pc = self.pick((u.personal, u.department, u.supervisor), (0.85, 0.1, 0.05))
            h = self.rng.uniform(19.0, 21.0)
            self.add(self.at(day0, h), Channel.LOGON, pc, ("Logon",))
            self.busy_block(day0, h + 0.05, h + 0.6, int(self.rng.integers(1, 4)), pc)
            self.add(self.at(day0, h + 0.7), Channel.LOGON, pc, ("Logoff",))

    # planted patterns --------------------------------------------------------
    def off_hours_burst(self, day0: int) -> None:
        pc = self.user.personal
        h = self.rng.uniform(21.5, 22.5)
        self.add(self.at(day0, h), Channel.LOGON, pc, ("Logon",), 1)
        self.add(self.at(day0, h + 0.02), Channel.DEVICE, pc, ("Connect",), 1)
        n = int(self.rng.integers(8, 16))
        for k, hh in enumerate(np.sort(self.rng.uniform(h + 0.03, h + 1.0, size=n))):
            ts = self.at(day0, hh)
            if k % 3 == 2:
                self.http_event(ts, pc, 1, category="cloud")
            else:
                self.file_event(ts, pc, 1, write=True, ext=self.pick(("zip", "exe", "doc")))
        self.add(self.at(day0, h + 1.05), Channel.DEVICE, pc, ("Disconnect",), 1)
        self.add(self.at(day0, h + 1.1), Channel.LOGON, pc, ("Logoff",), 1)

    def device_hopping(self, day0: int) -> None:
        n = int(self.rng.integers(3, 6))
        for h in np.sort(self.rng.uniform(12.0, 22.0, size=n)):
            pc = self.pick(self.others)
            self.add(self.at(day0, h), Channel.LOGON, pc, ("Logon",), 1)
            for j in range(int(self.rng.integers(1, 4))):
                self.file_event(self.at(day0, h + 0.02 * (j + 1)), pc, 1, write=False,
                                ext=self.pick(("doc", "pdf", "zip")))
            self.add(self.at(day0, h + 0.15), Channel.LOGON, pc, ("Logoff",), 1)

    def exfil_email(self, day0: int) -> None:
        pc = self.user.personal
        h = self.rng.uniform(18.5, 21.0)
        n = int(self.rng.integers(6, 13))
        for hh in np.sort(self.rng.uniform(h, h + 0.5, size=n)):
            self.email_event(self.at(day0, hh), pc, 1, kind="IE")
        self.http_event(self.at(day0, h + 0.55), pc, 1, category="cloud")


def _assign_devices(users: list[_User], rng: np.random.Generator) -> tuple[dict[str, str], list[str]]:
    classes: dict[str, str] = {}
    for u in users:
        classes[u.personal] = "Personal"
        classes[u.department] = "Department"
        classes[u.supervisor] = "Supervisor"
    others = []
    while len(others) < 8:
        pc = f"PC-{int(rng.integers(10000)):04d}"
        if pc not in classes:
            classes[pc] = "Other"
            others.append(pc)
    return classes, others


def _make_users(spec: ScenarioSpec, rng: np.random.Generator) -> list[_User]:
    ids = _user_ids(rng, spec.n_users)
    pcs = rng.permutation(10000)
    users = []
    n_dept = (spec.n_users + spec.users_per_department - 1) // spec.users_per_department
    dept_pcs = [f"PC-{pcs[spec.n_users + 2 * d]:04d}" for d in range(n_dept)]
    sup_pcs = [f"PC-{pcs[spec.n_users + 2 * d + 1]:04d}" for d in range(n_dept)]
    for i, uid in enumerate(ids):
        d = i // spec.users_per_department
        users.append(_User(uid, i, f"PC-{pcs[i]:04d}", dept_pcs[d], sup_pcs[d]))
    n_insiders = int(round(spec.anomaly_frac * spec.n_users))
    for j, i in enumerate(sorted(rng.choice(spec.n_users, size=n_insiders, replace=False))):
        u = users[i]
        u.insider = True
        u.pattern = spec.patterns[j % len(spec.patterns)]
        k = max(1, int(round(spec.anomaly_day_frac * spec.days)))
        u.anomaly_days = set(int(x) for x in rng.choice(spec.days, size=min(k, spec.days), replace=False))
    return users


def generate(spec: ScenarioSpec, out_dir: str | Path) -> dict[str, int]:
    """Write the corpus; returns per-file row counts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(spec.seed)
    master_seq, *user_seqs = root.spawn(spec.n_users + 1)
    master = np.random.default_rng(master_seq)
    users = _make_users(spec, master)
    device_classes, others = _assign_devices(users, master)
    start = datetime.combine(date.fromisoformat(spec.start), datetime.min.time(), tzinfo=timezone.utc)
    all_ids = [u.uid for u in users]

    rows: list[_Row] = []
    for u, seq in zip(users, user_seqs):
        rng = np.random.default_rng(seq)
        colleagues = [x for x in all_ids if x != u.uid] or [u.uid]
        w = _DayWriter(u, rng, others, colleagues, spec.evening_prob)
        for d in range(spec.days):
            day0 = int((start + timedelta(days=d)).timestamp())
            w.benign_day(day0, max(3, int(rng.poisson(spec.events_per_day))))
            if u.insider and d in u.anomaly_days:
                getattr(w, u.pattern)(day0)
        for k, r in enumerate(w.rows):
            r.event_id = f"{{{u.index:04X}-{k:06X}-{int(rng.integers(1 << 32)):08X}}}"
        rows.extend(w.rows)

    counts = {}
    for channel in Channel:
        chan_rows = sorted((r for r in rows if r.channel is channel), key=lambda r: (r.ts, r.event_id))
        with open(out_dir / f"{channel.value}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SCHEMAS[channel])
            for r in chan_rows:
                writer.writerow([r.event_id, format_date(r.ts), r.user, r.pc, *r.fields])
        counts[channel.value] = len(chan_rows)
    answers = sorted(r.event_id for r in rows if r.label)
    (out_dir / "answers.txt").write_text("".join(a + "\n" for a in answers))
    with open(out_dir / "devices.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pc", "class"])
        for pc in sorted(device_classes):
            writer.writerow([pc, device_classes[pc]])
    scenario = asdict(spec)
    scenario["insiders"] = {u.uid: {"pattern": u.pattern, "days": sorted(u.anomaly_days)} for u in users if u.insider}
    (out_dir / "scenario.json").write_text(json.dumps(scenario, indent=2, sort_keys=True) + "\n")
    counts["answers"] = len(answers)
    return counts


def separation_report(sessions, k_sigma: float = 2.0) -> dict:
    """For each anomalous session, whether some statistic sits at least ``k_sigma``
    benign standard deviations from the benign mean."""
    benign = np.stack([s.x_raw for s in sessions if not s.anomalous])
    mu, sd = benign.mean(axis=0), np.maximum(benign.std(axis=0), 1e-6)
    flags = {}
    for s in sessions:
        if s.anomalous:
            flags[s.session_id] = bool(np.any(np.abs(s.x_raw - mu) / sd >= k_sigma))
    return flags
