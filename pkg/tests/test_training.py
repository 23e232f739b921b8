import logging
from dataclasses import replace
from datetime import date

import numpy as np
import pytest

from insider_ssm.checks import network_loss_check
from insider_ssm.config import Config, ConfigError, ModelConfig, TrainConfig
from insider_ssm.features import FeaturizedSession, standardize
from insider_ssm.tensor import Parameter
from insider_ssm.training import (
    Adam, bce_loss, gate_regularizer, lr_at, smote_oversample, split_sessions, total_loss, train,
)


def test_bce_examples(rng):
    y = np.array([0.0, 1.0, 1.0, 0.0])
    loss, _ = bce_loss(y.copy(), y)
    assert 0 <= loss < 2e-7
    loss, _ = bce_loss(np.full(4, 0.5), y)
    assert loss == pytest.approx(np.log(2), abs=1e-15)
    p = rng.uniform(0.01, 0.99, 10)
    y = (rng.uniform(size=10) < 0.5).astype(float)
    ref = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert bce_loss(p, y)[0] == pytest.approx(ref, rel=1e-14)
    with pytest.raises(ValueError):
        bce_loss(np.ones(3) * 0.5, np.ones(4))


def test_bce_masked_mean_per_session(rng):
    p = rng.uniform(0.1, 0.9, (2, 4))
    y = np.array([[0, 1, 0, 0], [1, 0, 0, 0]], dtype=float)
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
    loss, dp = bce_loss(p, y, mask)
    ref = 0.5 * (bce_loss(p[0], y[0])[0] + bce_loss(p[1, :2], y[1, :2])[0])
    assert loss == pytest.approx(ref, rel=1e-14)
    assert np.all(dp[~mask] == 0)
    h = 1e-6
    for i, j in [(0, 1), (1, 0)]:
        q = p.copy(); q[i, j] += h
        r = p.copy(); r[i, j] -= h
        num = (bce_loss(q, y, mask)[0] - bce_loss(r, y, mask)[0]) / (2 * h)
        assert dp[i, j] == pytest.approx(num, rel=1e-6)


def test_gate_regularizer_examples():
    assert gate_regularizer(np.full(8, 0.5))[0] == 0.25
    assert gate_regularizer(np.array([1e-12, 1 - 1e-12]))[0] < 1e-11
    assert gate_regularizer(np.array([0.0, 0.5]))[0] == 0.125


def test_total_loss_examples(rng):
    p, y, g = rng.uniform(0.1, 0.9, 6), (rng.uniform(size=6) < 0.5).astype(float), rng.uniform(size=4)
    parts, _, _ = total_loss(p, y, g, 0.0)
    assert parts.total == bce_loss(p, y)[0]
    parts, _, _ = total_loss(np.full(6, 0.5), y, np.full(4, 0.5), 0.01)
    assert parts.total == pytest.approx(np.log(2) + 0.0025, abs=1e-15)
    assert parts.total == parts.bce + 0.01 * parts.l_g


def test_total_loss_gradcheck_through_network():
    rep = network_loss_check(seed=3, d=4, n_state=3, T=6)
    assert rep.passed, rep


def fs(i, anomalous, x=None, n=3):
    labels = np.zeros(n, dtype=int)
    if anomalous:
        labels[-1] = 1
    x = np.full(22, float(i)) if x is None else x
    return FeaturizedSession(f"s{i}", "u", date(2010, 1, 1), np.arange(1, n + 1), np.zeros(n), x, labels)


def test_smote_balanced_noop():
    data = [fs(0, True), fs(1, False)]
    assert smote_oversample(data) == data


def test_smote_no_minority_warns(caplog):
    data = [fs(i, False) for i in range(4)]
    with caplog.at_level(logging.WARNING):
        assert smote_oversample(data) == data
    assert "no anomalous" in caplog.text


def _mixed(rng, n_pos=8, n_neg=40):
    pos = [fs(i, True, rng.normal(5, 2, 22)) for i in range(n_pos)]
    neg = [fs(100 + i, False, rng.normal(0, 1, 22)) for i in range(n_neg)]
    return neg + pos


def test_smote_geometry_and_balance(rng):
    data = _mixed(rng)
    out = smote_oversample(data, k=5, seed=1)
    parents = {s.session_id: s for s in data}
    pos_x = np.stack([s.x_raw for s in data if s.anomalous])
    syn = out[len(data):]
    assert out[: len(data)] == data  # originals, including every majority session, untouched
    assert sum(s.anomalous for s in out) == sum(not s.anomalous for s in out)
    for s in syn:
        parent = parents[s.session_id.split("#")[0]]
        np.testing.assert_array_equal(s.labels, parent.labels)
        np.testing.assert_array_equal(s.s_b, parent.s_b)
        d_parent = np.linalg.norm(s.x_raw - parent.x_raw)
        dists = [d_parent + np.linalg.norm(s.x_raw - n) - np.linalg.norm(n - parent.x_raw) for n in pos_x]
        assert min(abs(d) for d in dists) <= 1e-9


def test_smote_u_zero_copies_parent(rng):
    data = _mixed(rng)
    out = smote_oversample(data, u_override=0.0)
    for s in out[len(data):]:
        parent = next(p for p in data if p.session_id == s.session_id.split("#")[0])
        np.testing.assert_array_equal(s.x_raw, parent.x_raw)


def test_smote_neighbours_use_standardized_space(rng):
    # dimension 0 has a huge raw scale; in standardized space it no longer dominates
    pos = [fs(i, True, np.r_[1e6 * rng.normal(), rng.normal(size=21)]) for i in range(7)]
    data = pos + [fs(100 + i, False, np.r_[1e6 * rng.normal(), rng.normal(size=21)]) for i in range(30)]
    std = standardize(np.stack([s.x_raw for s in data]))
    out = smote_oversample(data, k=2, seed=0, standardizer=std)
    z = std.transform(np.stack([s.x_raw for s in pos]))
    dz = np.sqrt(((z[:, None] - z[None]) ** 2).sum(-1))
    np.fill_diagonal(dz, np.inf)
    nn = np.argsort(dz, axis=1, kind="stable")[:, :2]
    for s in out[len(data):]:
        i = int(s.session_id.split("#")[0][1:])
        ok = False
        for j in nn[i]:
            a, b = pos[i].x_raw, pos[j].x_raw
            ok |= abs(np.linalg.norm(s.x_raw - a) + np.linalg.norm(s.x_raw - b) - np.linalg.norm(b - a)) <= 1e-9 * max(1, np.linalg.norm(b - a))
        assert ok


def test_smote_falls_back_to_duplication(rng):
    data = [fs(i, True, rng.normal(size=22)) for i in range(3)] + [fs(10 + i, False) for i in range(9)]
    out = smote_oversample(data, k=5)
    for s in out[len(data):]:
        parent = next(p for p in data if p.session_id == s.session_id.split("#")[0])
        np.testing.assert_array_equal(s.x_raw, parent.x_raw)
    assert sum(s.anomalous for s in out) == 9
    assert smote_oversample(data, mode="off") == data


def test_smote_deterministic(rng):
    data = _mixed(rng)
    a, b = smote_oversample(data, seed=4), smote_oversample(data, seed=4)
    assert [s.x_raw.tobytes() for s in a] == [s.x_raw.tobytes() for s in b]


def test_split_partition(rng):
    data = [fs(i, i % 5 == 0) for i in range(37)]
    tr, te = split_sessions(data, 0.8, seed=2)
    ids_tr, ids_te = {s.session_id for s in tr}, {s.session_id for s in te}
    assert len(tr) + len(te) == 37 and not ids_tr & ids_te and len(tr) == 30


def test_adam_minimizes_quadratic():
    p = Parameter(np.array([3.0, -2.0]))
    opt = Adam({"p": p}, lr=0.1)
    for _ in range(500):
        p.zero_grad()
        p.accumulate(2 * p.value)
        opt.step()
    assert np.all(np.abs(p.value) < 1e-2)


def test_adam_clips_global_norm():
    p = Parameter(np.array([0.0]))
    opt = Adam({"p": p}, lr=0.1, grad_clip=1.0)
    p.accumulate(np.array([100.0]))
    assert opt.step() == 100.0
    assert opt.m["p"][0] == pytest.approx(0.1 * 1.0)


def test_lr_schedule():
    tc = TrainConfig(lr=1e-3, epochs=5)
    assert lr_at(tc, 1) == 1e-3 and lr_at(tc, 5) == pytest.approx(5e-5)
    assert all(lr_at(tc, e) > lr_at(tc, e + 1) for e in range(1, 5))
    assert lr_at(replace(tc, lr_schedule="constant"), 5) == 1e-3


def _small_cfg(epochs=2, seed=0):
    return Config(model=ModelConfig(d_model=8, n_state=4, hidden=16),
                  train=TrainConfig(epochs=epochs, seed=seed, batch_size=16))


def test_train_deterministic_and_leak_free(tmp_path, small_sessions):
    r1 = train(small_sessions, _small_cfg())
    r2 = train(small_sessions, _small_cfg())
    r1.detector.save(tmp_path / "a.bin")
    r2.detector.save(tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert not r1.touched_ids & set(r1.test_ids)
    assert r1.touched_ids == set(r1.train_ids)
    assert len(r1.train_ids) + len(r1.test_ids) == len(small_sessions)
    for parts in r1.batch_losses:
        assert parts.total == pytest.approx(parts.bce + 0.01 * parts.l_g, abs=1e-12)
    g = r1.detector.network(*_inputs(small_sessions[:8], r1.detector), train=False)[1]
    assert np.all((g > 0) & (g < 1))


def _inputs(sessions, det):
    from insider_ssm.model import make_batch

    b = make_batch(sessions, det.standardizer)
    return b.s_b, b.s_c, b.x


def test_standardizer_fit_on_train_only(small_sessions):
    r = train(small_sessions, _small_cfg(epochs=1))
    train_set = [s for s in small_sessions if s.session_id in set(r.train_ids)]
    ref = standardize(np.stack([s.x_raw for s in train_set]))
    np.testing.assert_array_equal(r.detector.standardizer.mean, ref.mean)
    np.testing.assert_array_equal(r.detector.standardizer.std, ref.std)


def test_train_rejects_bad_data(small_sessions):
    benign = [s for s in small_sessions if not s.anomalous][:50]
    with pytest.raises(ConfigError):
        train(benign, _small_cfg(epochs=1))
    with pytest.raises(ConfigError):
        train(small_sessions[:5], _small_cfg(epochs=1))


def test_detector_roundtrip(tmp_path, small_sessions):
    from insider_ssm.model import Detector

    r = train(small_sessions, _small_cfg(epochs=1))
    r.detector.save(tmp_path / "m.bin")
    loaded = Detector.load(tmp_path / "m.bin")
    a = r.detector.score(small_sessions[:20])
    b = loaded.score(small_sessions[:20])
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()
