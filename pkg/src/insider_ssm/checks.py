"""Finite-difference gradient suite over every parameterized layer, plus the
encoder runtime-scaling harness used by ``bench``."""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .encoder import BehaviorEmbedding, IntervalEmbedding, MambaBlock, MambaEncoder, SelectiveSSM, StatEmbedding
from .fusion import Fusion, Gate, MLPHead, concat_final, session_pool
from .layers import BatchNorm, LayerNorm, Linear
from .model import Network
from .tensor import GradCheckReport, grad_check
from .training import total_loss


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def _perturb(module, rng: np.random.Generator, scale: float = 0.3) -> None:
    """Move every parameter off its initial value so no gradient is trivially zero."""
    for p in module.parameters().values():
        p.value += rng.normal(0.0, scale, size=p.value.shape)


def gradient_suite(seed: int = 0, d: int = 4, n_state: int = 3, T: int = 6, batch: int = 3,
                   epsilon: float = 1e-5, tol: float = 1e-4) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    out: list[SuiteResult] = []

    def run(name, fn, module, inputs, out_shape):
        # unit-norm projection keeps the scalar O(1), so round-off in coordinates whose
        # true gradient is zero (e.g. a bias feeding batch norm) stays far below tol
        w = rng.normal(size=out_shape)
        w /= np.linalg.norm(w)
        params = module.parameters() if module is not None else {}
        rep = grad_check(fn, params, inputs, epsilon=epsilon, tol=tol, weights=w)
        out.append(SuiteResult(name, rep))

    lin = Linear(d, 5, rng)
    _perturb(lin, rng)
    run("linear", lambda x: lin(x), lin, {"x": rng.normal(size=(batch, T, d))}, (batch, T, 5))

    emb = BehaviorEmbedding(192, d, rng)
    ids = rng.integers(1, 193, size=(batch, T))
    ids[0, 1] = ids[0, 0]  # repeated id exercises accumulation
    run("behavior_embedding", lambda: emb(ids), emb, {}, (batch, T, d))

    iemb = IntervalEmbedding(d, rng)
    _perturb(iemb, rng)
    run("interval_embedding", lambda s_c: iemb(s_c), iemb,
        {"s_c": rng.uniform(0.0, 50.0, size=(batch, T))}, (batch, T, d))

    bn = BatchNorm((22, d))
    _perturb(bn, rng)
    run("batch_norm", lambda x: bn(x, train=True), bn, {"x": rng.normal(size=(5, 22, d))}, (5, 22, d))

    for mode, shape in (("per_feature", (5, 22, d)), ("pooled", (5, 1, d))):
        st = StatEmbedding(22, d, rng, mode=mode)
        _perturb(st, rng)
        run(f"stat_embedding_{mode}", lambda x, st=st: st(x, train=True), st,
            {"x": rng.normal(size=(5, 22))}, shape)

    ln = LayerNorm(d)
    _perturb(ln, rng)
    run("layer_norm", lambda x: ln(x), ln, {"x": rng.normal(size=(batch, T, d))}, (batch, T, d))

    ssm = SelectiveSSM(2 * d, n_state, rng)
    _perturb(ssm, rng, 0.2)
    run("ssm_layer", lambda u: ssm(u), ssm, {"u": rng.normal(size=(batch, T, 2 * d))}, (batch, T, 2 * d))

    blk = MambaBlock(d, 2 * d, n_state, rng)
    _perturb(blk, rng, 0.2)
    run("mamba_block", lambda x: blk(x), blk, {"x": rng.normal(size=(batch, T, d))}, (batch, T, d))

    enc = MambaEncoder(d, n_state, 2, rng)
    _perturb(enc, rng, 0.2)
    run("mamba_encoder", lambda e: enc(e), enc, {"e": rng.normal(size=(batch, T, d))}, (batch, T, d))

    run("session_pool", lambda e_x: session_pool(e_x), None, {"e_x": rng.normal(size=(batch, 22, d))}, (batch, d))

    gate = Gate(d, rng)
    _perturb(gate, rng)
    run("gate", lambda e: gate(e), gate, {"e": rng.normal(size=(batch, d))}, (batch, d))

    for residual in ("paper", "mix_only"):
        fus = Fusion(d, residual)
        _perturb(fus, rng)

        def fuse_fn(h_b, h_c, g, fus=fus):
            y, back = fus(h_b, h_c, g)

            def b(dy):
                db, dc, dg = back(dy)
                return {"h_b": db, "h_c": dc, "g": dg}

            return y, b

        run(f"fusion_{residual}", fuse_fn, fus,
            {"h_b": rng.normal(size=(batch, T, d)), "h_c": rng.normal(size=(batch, T, d)),
             "g": rng.uniform(0.1, 0.9, size=(batch, d))}, (batch, T, d))

    def cat_fn(f, e):
        y, back = concat_final(f, e)

        def b(dy):
            df, de = back(dy)
            return {"f": df, "e": de}

        return y, b

    run("concat_final", cat_fn, None,
        {"f": rng.normal(size=(batch, T, d)), "e": rng.normal(size=(batch, d))}, (batch, T, 2 * d))

    head = MLPHead(2 * d, 6, rng, n_layers=3)
    _perturb(head, rng)
    run("mlp_head", lambda f: head(f), head, {"f": rng.normal(size=(batch, T, 2 * d))}, (batch, T))

    out.append(SuiteResult("total_loss_network", network_loss_check(seed, d, n_state, T, batch, epsilon, tol)))
    return out


def network_loss_check(seed: int = 0, d: int = 4, n_state: int = 3, T: int = 6, batch: int = 3,
                       epsilon: float = 1e-5, tol: float = 1e-4, lambda_gate: float = 0.01) -> GradCheckReport:
    """Total loss (BCE + lambda * gate term) differentiated through the whole network."""
    rng = np.random.default_rng(seed + 1)
    cfg = ModelConfig(d_model=d, n_state=n_state, hidden=6)
    net = Network(cfg, seed=seed)
    _perturb(net, rng, 0.2)
    s_b = rng.integers(1, 193, size=(batch, T))
    s_c = rng.uniform(0.0, 100.0, size=(batch, T))
    y = (rng.uniform(size=(batch, T)) < 0.3).astype(float)
    mask = np.ones((batch, T), dtype=bool)
    mask[-1, T - 2 :] = False  # ragged last session

    def fn(x):
        p, g, back = net(s_b, s_c, x, train=True)
        parts, dp, dg = total_loss(p, y, g, lambda_gate, mask)

        def b(w):
            return back(dp * w, dg * w)

        return np.array(parts.total), b

    return grad_check(fn, net.parameters(), {"x": rng.normal(size=(batch, 22))}, epsilon=epsilon, tol=tol)


def encoder_scaling(lengths=(256, 512, 1024, 2048), repeats: int = 20, d_model: int = 64,
                    n_state: int = 16, seed: int = 0) -> list[tuple[int, float]]:
    """Median forward wall time (ms) of a two-layer encoder on one sequence of each length.

    Inference-mode forward (no scan states kept), i.e. the scoring path.
    """
    rng = np.random.default_rng(seed)
    enc = MambaEncoder(d_model, n_state, 2, rng)
    enc(rng.normal(size=(1, 8, d_model)), grad=False)  # jit compile
    inputs = {int(T): rng.normal(size=(1, T, d_model)) for T in lengths}
    for e in inputs.values():
        for _ in range(3):  # settle allocator and caches at each size
            enc(e, grad=False)
    times: dict[int, list[float]] = {T: [] for T in inputs}
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        # round-robin over lengths so slow drift in machine load hits every T alike
        for _ in range(repeats):
            for T, e in inputs.items():
                t0 = time.perf_counter()
                enc(e, grad=False)
                times[T].append(time.perf_counter() - t0)
    finally:
        if gc_was_enabled:
            gc.enable()
    rows = [(T, float(np.median(ts) * 1e3)) for T, ts in times.items()]
    return rows
