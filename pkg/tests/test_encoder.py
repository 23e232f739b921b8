import numpy as np
import pytest

from insider_ssm import scan
from insider_ssm.config import ConfigError
from insider_ssm.encoder import (
    BehaviorEmbedding, IntervalEmbedding, MambaBlock, MambaEncoder, SelectiveSSM, StatEmbedding,
)
from insider_ssm.layers import BatchNorm
from insider_ssm.tensor import grad_check

EPS, TOL = 1e-5, 1e-4


def test_behavior_lookup(rng):
    emb = BehaviorEmbedding(192, 5, rng)
    out, _ = emb(np.array([[3, 3, 7], [7, 1, 192]]))
    np.testing.assert_array_equal(out[0, 0], out[0, 1])
    np.testing.assert_array_equal(out[0, 2], out[1, 0])
    np.testing.assert_array_equal(out[0, 0], emb.lookup.table.value[3])
    for bad in ([[193]], [[-1]]):
        with pytest.raises(ValueError):
            emb(np.array(bad))
    with pytest.raises(ValueError):
        emb(np.array([[0]]), allow_padding=False)


def test_behavior_row_gradient_is_sum_of_occurrences(rng):
    emb = BehaviorEmbedding(192, 4, rng)
    ids = np.array([[5, 9, 5]])
    g = rng.normal(size=(1, 3, 4))
    _, back = emb(ids)
    back(g)
    np.testing.assert_allclose(emb.lookup.table.grad[5], g[0, 0] + g[0, 2], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(emb.lookup.table.grad[0], 0.0)
    rep = grad_check(lambda: emb(ids), emb.parameters(), epsilon=EPS, tol=TOL, weights=g)
    assert rep.passed, rep


def test_padding_row_never_trained(rng):
    emb = BehaviorEmbedding(192, 4, rng)
    _, back = emb(np.array([[0, 0, 3]]))
    back(np.ones((1, 3, 4)))
    assert np.all(emb.lookup.table.grad[0] == 0)


def test_interval_embedding(rng):
    emb = IntervalEmbedding(4, rng)
    emb.proj.bias.value[:] = rng.normal(size=4)
    out, _ = emb(np.array([0.0, np.e - 1]))
    np.testing.assert_array_equal(out[0], emb.proj.bias.value)
    np.testing.assert_allclose(out[1], emb.proj.weight.value[0] + emb.proj.bias.value, rtol=1e-15)
    assert np.all(np.diff(np.log1p([0.0, 5.0, 50.0])) > 0)
    with pytest.raises(ValueError):
        emb(np.array([-1.0]))
    rep = grad_check(lambda s_c: emb(s_c), emb.parameters(), {"s_c": rng.uniform(0, 30, (2, 5))},
                     epsilon=EPS, tol=TOL, weights=rng.normal(size=(2, 5, 4)))
    assert rep.passed, rep


@pytest.mark.parametrize("mode", ["per_feature", "pooled"])
def test_stat_embedding_modes(rng, mode):
    st = StatEmbedding(22, 6, rng, mode=mode, eps=1e-12)
    x = rng.normal(size=(16, 22))
    out, _ = st(x, train=True)
    assert out.shape == ((16, 22, 6) if mode == "per_feature" else (16, 1, 6))
    # unit scale / zero shift at init, so output is the normalized batch
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-6)
    e1, _ = st(x[:3], train=False)
    e2, _ = st(x[:3], train=False)
    np.testing.assert_array_equal(e1, e2)
    with pytest.raises(Exception):
        st(np.zeros((4, 21)))


def test_bn_eval_before_training_is_config_error(rng):
    st = StatEmbedding(22, 4, rng)
    with pytest.raises(ConfigError):
        st(rng.normal(size=(2, 22)), train=False)


def test_bn_running_stats_and_grad(rng):
    bn = BatchNorm((3,), momentum=0.5)
    x = rng.normal(2.0, 3.0, size=(8, 3))
    bn(x)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.5 * x.mean(axis=0))
    np.testing.assert_allclose(bn.buffers["running_var"], 0.5 + 0.5 * x.var(axis=0, ddof=1))
    assert np.all(bn.buffers["running_var"] > 0)
    for p in bn.parameters().values():
        p.value += rng.normal(size=p.value.shape)
    rep = grad_check(lambda x: bn(x), bn.parameters(), {"x": x}, epsilon=EPS, tol=TOL,
                     weights=rng.normal(size=x.shape))
    assert rep.passed, rep
    rep = grad_check(lambda x: bn(x, train=False), bn.parameters(), {"x": x}, epsilon=EPS, tol=TOL,
                     weights=rng.normal(size=x.shape))
    assert rep.passed, rep


def _ssm(rng, d=8, n=3):
    ssm = SelectiveSSM(d, n, rng)
    for p in ssm.parameters().values():
        p.value += rng.normal(0, 0.2, p.value.shape)
    return ssm


def test_ssm_first_step_has_no_history(rng):
    ssm = _ssm(rng)
    u = rng.normal(size=(1, 4, 8))
    y, _ = ssm(u)
    u2 = u.copy()
    u2[:, 1:] = rng.normal(size=(1, 3, 8))
    y2, _ = ssm(u2)
    np.testing.assert_array_equal(y[:, 0], y2[:, 0])
    y_one, _ = ssm(u[:, :1])
    np.testing.assert_allclose(y_one[:, 0], y[:, 0], rtol=1e-13, atol=1e-15)


def test_ssm_memoryless_limit(rng):
    ssm = _ssm(rng)
    ssm.A_log.value[:] = 60.0  # A ~ -1e26, decay underflows to 0
    u = rng.normal(size=(1, 5, 8))
    y, _ = ssm(u)
    u2 = u.copy()
    u2[0, :3] += rng.normal(size=(3, 8))
    y2, _ = ssm(u2)
    np.testing.assert_array_equal(y[0, 3:], y2[0, 3:])


def test_ssm_against_explicit_recurrence(rng):
    ssm = _ssm(rng, d=3, n=2)
    u = rng.normal(size=(1, 4, 3))
    y, _ = ssm(u)
    A = -np.exp(ssm.A_log.value)
    h = np.zeros((3, 2))
    for t in range(4):
        x = u[0, t]
        delta = np.log1p(np.exp(x @ ssm.dt_proj.weight.value + ssm.dt_proj.bias.value))
        B, C = x @ ssm.b_proj.weight.value, x @ ssm.c_proj.weight.value
        h = np.exp(delta[:, None] * A) * h + (delta * x)[:, None] * B[None, :]
        np.testing.assert_allclose(y[0, t], h @ C, rtol=1e-12, atol=1e-14)


def test_ssm_layer_gradcheck(rng):
    block = MambaBlock(4, 8, 3, rng)
    for p in block.parameters().values():
        p.value += rng.normal(0, 0.2, p.value.shape)
    rep = grad_check(lambda x: block(x), block.parameters(), {"x": rng.normal(size=(1, 5, 4))},
                     epsilon=EPS, tol=TOL)
    assert rep.passed, rep
    ssm = _ssm(rng)
    rep = grad_check(lambda u: ssm(u), ssm.parameters(), {"u": rng.normal(size=(2, 5, 8))},
                     epsilon=EPS, tol=TOL, weights=rng.normal(size=(2, 5, 8)))
    assert rep.passed, rep


def test_scan_paths_agree(rng):
    B, T, D, N = 3, 9, 5, 4
    delta = rng.uniform(0.01, 1.0, (B, T, D))
    A = -rng.uniform(0.5, 3.0, (D, N))
    v, Bm, Cm = rng.normal(size=(B, T, D)), rng.normal(size=(B, T, N)), rng.normal(size=(B, T, N))
    gy = rng.normal(size=(B, T, D))
    y1, H1 = scan.scan_forward(delta, A, v, Bm, Cm)
    y2, H2 = scan.scan_forward_numpy(delta, A, v, Bm, Cm)
    np.testing.assert_allclose(y1, y2, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(H1, H2, rtol=1e-12, atol=1e-13)
    y3, H3 = scan.scan_forward(delta, A, v, Bm, Cm, keep_states=False)
    np.testing.assert_array_equal(y3, y1)
    assert H3 is None
    for a, b in zip(scan.scan_backward(gy, delta, A, v, Bm, Cm, H1),
                    scan.scan_backward_numpy(gy, delta, A, v, Bm, Cm, H2)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_no_grad_forward_matches_and_refuses_backward(rng):
    enc = MambaEncoder(4, 3, 2, rng)
    e = rng.normal(size=(2, 7, 4))
    y, _ = enc(e)
    y_ng, back = enc(e, grad=False)
    np.testing.assert_array_equal(y_ng, y)
    with pytest.raises(RuntimeError):
        back(np.ones_like(y))


def test_encoder_gradcheck(rng):
    enc = MambaEncoder(4, 3, 2, rng)
    for p in enc.parameters().values():
        p.value += rng.normal(0, 0.2, p.value.shape)
    rep = grad_check(lambda e: enc(e), enc.parameters(), {"e": rng.normal(size=(2, 6, 4))},
                     epsilon=EPS, tol=TOL, weights=rng.normal(size=(2, 6, 4)))
    assert rep.passed, rep


def test_zero_weight_encoder_is_identity(rng):
    enc = MambaEncoder(6, 4, 2, rng)
    for blk in enc.blocks:
        for p in blk.parameters().values():
            p.value[...] = 0.0
    e = rng.normal(size=(2, 7, 6))
    out, back = enc(e)
    np.testing.assert_array_equal(out, e)
    g = rng.normal(size=e.shape)
    np.testing.assert_array_equal(back(g), g)


def test_causality_probe(rng):
    enc = MambaEncoder(8, 4, 2, rng)
    e = rng.normal(size=(1, 24, 8))
    base, _ = enc(e)
    for _ in range(25):
        t = int(rng.integers(0, 24))
        e2 = e.copy()
        e2[0, t] += rng.normal(size=8)
        out, _ = enc(e2)
        np.testing.assert_array_equal(out[0, :t], base[0, :t])
        if t < 23:
            assert not np.array_equal(out[0, t:], base[0, t:])


def test_padding_does_not_leak_backwards(rng):
    enc = MambaEncoder(4, 3, 2, rng)
    e = rng.normal(size=(1, 5, 4))
    padded = np.concatenate([e, np.zeros((1, 3, 4))], axis=1)
    np.testing.assert_array_equal(enc(e)[0], enc(padded)[0][:, :5])


def test_stability_10k_sequences(rng):
    enc = MambaEncoder(4, 3, 2, rng)
    e = rng.normal(0, 10.0, size=(10_000, 12, 4))
    out, _ = enc(e)
    assert np.all(np.isfinite(out))
    for blk in enc.blocks:
        assert np.all(blk.ssm.A < 0)
