"""The full detector network: embeddings -> two encoders -> gated fusion -> MLP head."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .encoder import BehaviorEmbedding, IntervalEmbedding, MambaEncoder, StatEmbedding
from .features import FeaturizedSession, Standardizer
from .fusion import Fusion, Gate, MLPHead, concat_final, session_pool
from .tensor import Module, load_tensors, save_tensors


@dataclass
class Batch:
    s_b: np.ndarray  # [B, T] int, 0 = padding
    s_c: np.ndarray  # [B, T]
    x: np.ndarray  # [B, N] standardized
    y: np.ndarray  # [B, T] 0/1
    mask: np.ndarray  # [B, T] bool
    session_ids: list[str]

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def make_batch(sessions: Sequence[FeaturizedSession], standardizer: Standardizer,
               x_override: Sequence[np.ndarray] | None = None) -> Batch:
    """Right-pad a list of sessions. ``x_override`` supplies synthetic statistics."""
    n, t = len(sessions), max(len(s) for s in sessions)
    s_b = np.zeros((n, t), dtype=np.int64)
    s_c = np.zeros((n, t))
    y = np.zeros((n, t))
    mask = np.zeros((n, t), dtype=bool)
    for i, s in enumerate(sessions):
        k = len(s)
        s_b[i, :k], s_c[i, :k], y[i, :k], mask[i, :k] = s.s_b, s.s_c, s.labels, True
    raw = np.stack([s.x_raw for s in sessions]) if x_override is None else np.stack(x_override)
    return Batch(s_b, s_c, standardizer.transform(raw), y, mask, [s.session_id for s in sessions])


class Network(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_model
        self.embed_b = BehaviorEmbedding(cfg.n_ids, d, rng)
        self.embed_c = IntervalEmbedding(d, rng)
        self.embed_x = StatEmbedding(cfg.n_stats, d, rng, cfg.stat_tokens, cfg.bn_eps, cfg.bn_momentum)
        self.encoder_b = MambaEncoder(d, cfg.n_state, cfg.n_layers, rng, cfg.expand, cfg.ln_eps)
        self.encoder_c = MambaEncoder(d, cfg.n_state, cfg.n_layers, rng, cfg.expand, cfg.ln_eps)
        self.gate = Gate(d, rng)
        self.fusion = Fusion(d, cfg.residual, cfg.ln_eps)
        self.head = MLPHead(2 * d, cfg.hidden, rng, cfg.head_layers)

    def __call__(self, s_b: np.ndarray, s_c: np.ndarray, x: np.ndarray, train: bool = True,
                 grad: bool = True):
        """Returns ``(P [B, T], G [B, d], back)``; ``back(dP, dG)`` returns ``dx``.

        ``train`` selects batch statistics in BN; ``grad=False`` drops what only backward needs.
        """
        e_b, eb_back = self.embed_b(s_b)
        e_c, ec_back = self.embed_c(s_c)
        e_x, ex_back = self.embed_x(x, train=train)
        h_b, hb_back = self.encoder_b(e_b, grad)
        h_c, hc_back = self.encoder_c(e_c, grad)
        e_sess, pool_back = session_pool(e_x)
        g, gate_back = self.gate(e_sess)
        f, fuse_back = self.fusion(h_b, h_c, g)
        f_final, cat_back = concat_final(f, e_sess)
        p, head_back = self.head(f_final)

        def back(dp: np.ndarray, dg: np.ndarray | None = None) -> np.ndarray:
            df, de = cat_back(head_back(dp))
            db, dc, dg_f = fuse_back(df)
            dg_total = dg_f if dg is None else dg_f + dg
            de = de + gate_back(dg_total)
            eb_back(hb_back(db))
            ec_back(hc_back(dc))
            return ex_back(pool_back(de))

        return p, g, back

    def predict(self, batch: Batch) -> np.ndarray:
        p, _, _ = self(batch.s_b, batch.s_c, batch.x, train=False, grad=False)
        return p


@dataclass
class Detector:
    """A trained network plus the frozen statistics transform."""

    network: Network
    standardizer: Standardizer
    meta: dict

    def save(self, path: str | Path) -> None:
        tensors = dict(self.network.state_dict())
        tensors["standardizer.mean"] = self.standardizer.mean
        tensors["standardizer.std"] = self.standardizer.std
        save_tensors(path, tensors, self.meta)

    @classmethod
    def load(cls, path: str | Path) -> "Detector":
        tensors, meta = load_tensors(path)
        cfg = ModelConfig(**meta["config"]["model"])
        net = Network(cfg)
        net.load_state_dict(tensors)
        std = Standardizer(tensors["standardizer.mean"], tensors["standardizer.std"])
        return cls(net, std, meta)

    def score(self, sessions: Sequence[FeaturizedSession], batch_size: int = 64) -> list[np.ndarray]:
        """Per-step anomaly probabilities for each session, in input order."""
        out: list[np.ndarray] = []
        for i in range(0, len(sessions), batch_size):
            chunk = sessions[i : i + batch_size]
            batch = make_batch(chunk, self.standardizer)
            p = self.network.predict(batch)
            out.extend(p[j, : len(s)].copy() for j, s in enumerate(chunk))
        return out
