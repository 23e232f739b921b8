from datetime import date, datetime, timezone

import numpy as np
import pytest
from hypothesis import given, strategies as st

from insider_ssm.config import ConfigError, FeatureConfig
from insider_ssm.features import (
    N_IDS, N_STATS, STAT_NAMES, EncodingSpace, FeaturizedSession, decode_id, encode_behavior,
    encode_triple, featurize_all, interval_sequence, read_jsonl, standardize, statistical_features,
    write_jsonl,
)
from insider_ssm.logs import Channel, DeviceClass, LogEvent, Session

SPACE = EncodingSpace()
WORK = int(datetime(2010, 1, 4, 10, 0, tzinfo=timezone.utc).timestamp())
NIGHT = int(datetime(2010, 1, 4, 22, 0, tzinfo=timezone.utc).timestamp())


def make(channel, action, fields, ts=WORK, dclass=DeviceClass.PERSONAL, i=0):
    return LogEvent(f"e{i}", "u", ts, channel, "PC-1", action, fields, dclass)


def stat(x, name):
    return x[STAT_NAMES.index(name)]


def test_encoding_examples():
    assert encode_behavior(make(Channel.LOGON, "logon", ("Logon",)), SPACE) == 1
    web = make(Channel.HTTP, "visit", ("http://cnn.com", "neutral"), NIGHT, DeviceClass.OTHER)
    assert encode_behavior(web, SPACE) == 192
    logoff = make(Channel.LOGON, "logoff", ("Logoff",), NIGHT, DeviceClass.OTHER)
    assert encode_behavior(logoff, SPACE) == 16


def test_bijection_over_all_ids():
    triples = [(b, d, ts) for b in range(24) for d in range(4) for ts in (1, 2)]
    ids = [encode_triple(*t) for t in triples]
    assert sorted(ids) == list(range(1, N_IDS + 1))
    for bid in range(1, N_IDS + 1):
        assert encode_triple(*decode_id(bid)) == bid
    for t in triples:
        assert decode_id(encode_triple(*t)) == t


@pytest.mark.parametrize("b,lo,hi", [(0, 1, 16), (2, 17, 32), (4, 33, 128), (16, 129, 160), (20, 161, 192)])
def test_range_endpoints(b, lo, hi):
    span = {0: 2, 2: 2, 4: 12, 16: 4, 20: 4}[b]
    assert encode_triple(b, 0, 1) == lo
    assert encode_triple(b + span - 1, 3, 2) == hi


def test_invalid_triple():
    for bad in [(24, 0, 1), (0, 4, 1), (0, 0, 0), (0, 0, 3)]:
        with pytest.raises(ValueError):
            encode_triple(*bad)


def test_subtype_mapping():
    f = lambda name, op: encode_behavior(make(Channel.FILE, op, (name, "x")), SPACE)
    assert decode_id(f("a.zip", "open"))[0] == 4
    assert decode_id(f("a.jpg", "open"))[0] == 9
    assert decode_id(f("a.zip", "write"))[0] == 10
    assert decode_id(f("a.weird", "write"))[0] == 10 + 4  # unknown extension -> txt
    assert decode_id(f("noext", "open"))[0] == 4 + 4
    mail = lambda to, frm: decode_id(encode_behavior(make(Channel.EMAIL, "send", (to, frm, "Send")), SPACE))[0]
    assert mail("a@dtaa.com", "b@dtaa.com") == 16
    assert mail("a@gmail.com", "b@dtaa.com") == 17
    assert mail("a@dtaa.com", "b@gmail.com") == 18
    assert mail("a@gmail.com", "b@yahoo.com") == 19
    assert mail("a@dtaa.com;c@gmail.com", "b@dtaa.com") == 17
    web = lambda cat: decode_id(encode_behavior(make(Channel.HTTP, "visit", ("u", cat)), SPACE))[0]
    assert [web(c) for c in ("cloud", "hacktivist", "job", "neutral", "gaming")] == [20, 21, 22, 23, 23]
    dev = lambda a: decode_id(encode_behavior(make(Channel.DEVICE, a, ("X",)), SPACE))[0]
    assert (dev("connect"), dev("disconnect")) == (2, 3)


def test_time_segment_boundaries():
    at = lambda h: int(datetime(2010, 1, 4, h, tzinfo=timezone.utc).timestamp())
    assert [SPACE.time_segment(at(h)) for h in (7, 8, 17, 18)] == [2, 1, 1, 2]


def test_interval_examples():
    c, _ = interval_sequence([5.0])
    assert c.tolist() == [0.0]
    c, _ = interval_sequence([0.0, 0.0, 10.0], 0.2)
    assert c.tolist() == [0.0, 0.0, 2.0]
    c, _ = interval_sequence([0.0, 10.0], 0.2, start=0.0)
    assert c.tolist() == [0.0, 2.0]


def test_interval_closed_form():
    d, T = 7.0, 200
    t = np.arange(T + 1) * d  # first event at session start, then gaps d
    c, _ = interval_sequence(t, 0.2)
    closed = d * (1 - 0.8 ** np.arange(T + 1))
    np.testing.assert_allclose(c, closed, rtol=0, atol=1e-12)
    assert np.all(np.diff(c) >= 0) and np.all(c <= d + 1e-12)  # monotone from below


def test_interval_clamps_skew():
    c, n = interval_sequence([10.0, 5.0, 15.0], 1.0)
    assert n == 1 and c.tolist() == [0.0, 0.0, 10.0]


@given(st.lists(st.floats(0, 1e5), min_size=1, max_size=50), st.floats(0.01, 1.0))
def test_interval_bounds(gaps, alpha):
    t = np.cumsum(gaps)
    c, _ = interval_sequence(t, alpha, start=t[0] - gaps[0])
    assert np.all(c >= 0) and np.all(c <= max(gaps) * (1 + 1e-12))
    c1, _ = interval_sequence(t, 1.0, start=t[0] - gaps[0])
    np.testing.assert_array_equal(c1, np.diff(t, prepend=t[0] - gaps[0]))


def session(events):
    return Session("u", date(2010, 1, 4), tuple(events))


def test_stats_single_logon():
    x = statistical_features(session([make(Channel.LOGON, "logon", ("Logon",))]), SPACE)
    assert x.shape == (N_STATS,) == (22,)
    assert stat(x, "logon_count") == 1 and stat(x, "logon_duration") == 0
    assert x[[i for i, n in enumerate(STAT_NAMES) if n.endswith("count")]].sum() == 3  # logon, personal, working
    assert stat(x, "email_count") == 0 and stat(x, "email_duration") == 0


def test_stats_two_files():
    evs = [make(Channel.FILE, "open", ("a.doc", "File Open"), WORK, i=0),
           make(Channel.FILE, "write", ("a.doc", "File Write"), WORK + 300, i=1)]
    x = statistical_features(session(evs), SPACE)
    for f in ("file", "personal", "working"):
        assert stat(x, f"{f}_count") == 2 and stat(x, f"{f}_duration") == 300


def _naive_stats(events):
    """Independent double loop over factors and event pairs."""
    def factor(e, k):
        chans = [Channel.LOGON, Channel.DEVICE, Channel.FILE, Channel.EMAIL, Channel.HTTP]
        if k < 5:
            return e.channel is chans[k]
        if k < 9:
            return int(e.device_class) == k - 5
        hour = datetime.fromtimestamp(e.timestamp, tz=timezone.utc).hour
        return (8 <= hour < 18) == (k == 9)
    out = []
    for k in range(11):
        sel = [e for e in events if factor(e, k)]
        span = 0
        for a in sel:
            for b in sel:
                span = max(span, b.timestamp - a.timestamp)
        out += [len(sel), span]
    return np.array(out, dtype=float)


@given(st.lists(st.tuples(st.sampled_from(list(Channel)), st.sampled_from(list(DeviceClass)),
                          st.integers(0, 86399)), min_size=1, max_size=30))
def test_stats_oracle_and_partitions(spec):
    base = int(datetime(2010, 1, 4, tzinfo=timezone.utc).timestamp())
    fields = {Channel.LOGON: ("Logon",), Channel.DEVICE: ("Connect",), Channel.FILE: ("a.pdf", "File Open"),
              Channel.EMAIL: ("a@dtaa.com", "b@dtaa.com", "Send"), Channel.HTTP: ("u", "job")}
    actions = {Channel.LOGON: "logon", Channel.DEVICE: "connect", Channel.FILE: "open",
               Channel.EMAIL: "send", Channel.HTTP: "visit"}
    evs = sorted((make(ch, actions[ch], fields[ch], base + s, dc, i) for i, (ch, dc, s) in enumerate(spec)),
                 key=lambda e: e.timestamp)
    x = statistical_features(session(evs), SPACE)
    np.testing.assert_array_equal(x, _naive_stats(evs))
    counts = x[0::2]
    T = len(evs)
    assert counts[:5].sum() == T and counts[5:9].sum() == T and counts[9:].sum() == T


def test_standardize_examples():
    s = standardize([[0.0, 3.0], [2.0, 3.0]])
    np.testing.assert_array_equal(s.transform(np.array([[0.0, 3.0], [2.0, 3.0]])), [[-1, 0], [1, 0]])
    v = np.array([5.0, 1.0])
    np.testing.assert_allclose(s.transform(v), (v - np.array([1.0, 3.0])) / np.array([1.0, 1e-6]))
    with pytest.raises(ConfigError):
        standardize([[1.0, 2.0]])


def test_standardized_moments(rng):
    x = rng.normal(3.0, 10.0, size=(500, 22))
    x[:, 4] = 7.0
    z = standardize(x).transform(x)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    live = np.arange(22) != 4
    assert np.all(np.abs(z.std(axis=0)[live] - 1) < 1e-6)
    assert np.all(z[:, 4] == 0)


def test_featurized_invariants():
    with pytest.raises(ValueError):
        FeaturizedSession("s", "u", date(2010, 1, 1), [0], [0.0], np.zeros(22), [0])
    with pytest.raises(ValueError):
        FeaturizedSession("s", "u", date(2010, 1, 1), [1, 2], [0.0], np.zeros(22), [0, 0])
    with pytest.raises(ValueError):
        FeaturizedSession("s", "u", date(2010, 1, 1), [1], [-1.0], np.zeros(22), [0])


def test_jsonl_roundtrip(tmp_path, small_sessions):
    path = tmp_path / "s.jsonl"
    assert write_jsonl(path, small_sessions[:40]) == 40
    back = read_jsonl(path)
    for a, b in zip(small_sessions[:40], back):
        assert a.session_id == b.session_id and a.day == b.day
        for f in ("s_b", "s_c", "x_raw", "labels"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_featurize_custom_hours(small_corpus):
    from insider_ssm.logs import load_corpus, sessionize

    sessions = sessionize(load_corpus(small_corpus).events)[:30]
    a = featurize_all(sessions)
    b = featurize_all(sessions, FeatureConfig(work_start_hour=0, work_end_hour=24))
    assert all(np.all(decode_id(int(i))[2] == 1 for i in s.s_b) for s in b)
    assert any((s.s_b % 2 == 0).any() for s in a)
