"""Loss, minority oversampling, session split, Adam and the training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Config, ConfigError
from .features import FeaturizedSession, Standardizer, standardize
from .model import Batch, Detector, Network, make_batch
from .tensor import Parameter

log = logging.getLogger(__name__)

CLAMP = 1e-7


# --------------------------------------------------------------------------- #
# Losses. Each returns the value and its gradient(s).
# --------------------------------------------------------------------------- #


def bce_loss(p: np.ndarray, y: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Binary cross-entropy averaged over the valid steps of each sequence, then
    over sequences. Accepts ``[T]`` or ``[B, T]``; probabilities are clamped to
    ``[1e-7, 1 - 1e-7]`` (gradient is zero where the clamp is active)."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"probability shape {p.shape} != label shape {y.shape}")
    squeeze = p.ndim == 1
    if squeeze:
        p, y = p[None], y[None]
    mask = np.ones_like(p, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(p.shape)
    pc = np.clip(p, CLAMP, 1.0 - CLAMP)
    per_step = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    n_valid = mask.sum(axis=1)
    weight = mask / (n_valid[:, None] * p.shape[0])
    loss = float(np.sum(per_step * weight))
    dp = -(y / pc - (1.0 - y) / (1.0 - pc)) * weight
    dp = np.where((p > CLAMP) & (p < 1.0 - CLAMP), dp, 0.0)
    return loss, dp[0] if squeeze else dp


def gate_regularizer(g: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of g(1-g) over every gate coordinate. The gate is constant over time,
    so the time average equals the per-session value."""
    g = np.asarray(g, dtype=np.float64)
    return float(np.mean(g * (1.0 - g))), (1.0 - 2.0 * g) / g.size


@dataclass
class LossParts:
    bce: float
    l_g: float
    total: float


def total_loss(p, y, g, lambda_gate: float = 0.01, mask=None) -> tuple[LossParts, np.ndarray, np.ndarray]:
    bce, dp = bce_loss(p, y, mask)
    lg, dg = gate_regularizer(g)
    return LossParts(bce, lg, bce + lambda_gate * lg), dp, lambda_gate * dg


# --------------------------------------------------------------------------- #
# Oversampling
# --------------------------------------------------------------------------- #


def smote_oversample(
    train: Sequence[FeaturizedSession],
    k: int = 5,
    seed: int = 0,
    standardizer: Standardizer | None = None,
    mode: str = "stats",
    u_override: float | None = None,
) -> list[FeaturizedSession]:
    """Balance anomalous sessions (any positive step) against normal ones.

    Synthetic statistics interpolate a minority session toward one of its ``k``
    nearest minority neighbours (Euclidean, standardized space); its sequences and
    labels are copied from the parent. With fewer than ``k + 1`` minority sessions,
    or ``mode='duplicate'``, parents are duplicated instead.
    """
    train = list(train)
    if mode == "off":
        return train
    minority = [s for s in train if s.anomalous]
    n_major = len(train) - len(minority)
    if not minority:
        log.warning("no anomalous sessions in training data; oversampling skipped")
        return train
    need = n_major - len(minority)
    if need <= 0:
        return train
    rng = np.random.default_rng(seed)
    raw = np.stack([s.x_raw for s in minority])
    if standardizer is None:
        standardizer = standardize(raw) if len(minority) >= 2 else Standardizer(np.zeros(raw.shape[1]), np.ones(raw.shape[1]))
    z = standardizer.transform(raw)
    interpolate = mode == "stats" and len(minority) >= k + 1
    if interpolate:
        dist = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(axis=-1))
        np.fill_diagonal(dist, np.inf)
        neighbours = np.argsort(dist, axis=1, kind="stable")[:, :k]
    synthetic = []
    for i in range(need):
        s = int(rng.integers(len(minority)))
        parent = minority[s]
        x = parent.x_raw
        if interpolate:
            n = int(neighbours[s, rng.integers(k)])
            u = rng.uniform() if u_override is None else u_override
            x = raw[s] + u * (raw[n] - raw[s])
        synthetic.append(replace(parent, session_id=f"{parent.session_id}#syn{i}", x_raw=np.array(x)))
    return train + synthetic


# --------------------------------------------------------------------------- #
# Optimizer
# --------------------------------------------------------------------------- #


class Adam:
    def __init__(self, params: dict[str, Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, grad_clip: float | None = None):
        self.params = params
        self.lr, self.eps, self.grad_clip = lr, eps, grad_clip
        self.b1, self.b2 = betas
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the pre-clip grad norm."""
        norm = float(np.sqrt(sum(np.sum(p.grad * p.grad) for p in self.params.values())))
        scale = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            scale = self.grad_clip / norm
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            g = p.grad * scale
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.value -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return norm


# --------------------------------------------------------------------------- #
# Training
# --------------------------------------------------------------------------- #


def split_sessions(sessions: Sequence[FeaturizedSession], ratio: float = 0.8, seed: int = 0):
    """Shuffle and split by session; returns (train, test)."""
    idx = np.random.default_rng(seed).permutation(len(sessions))
    n_train = int(round(ratio * len(sessions)))
    return [sessions[i] for i in sorted(idx[:n_train])], [sessions[i] for i in sorted(idx[n_train:])]


@dataclass
class EpochRecord:
    epoch: int
    bce: float
    l_g: float
    total: float


@dataclass
class TrainResult:
    detector: Detector
    history: list[EpochRecord]
    batch_losses: list[LossParts]
    train_ids: list[str]
    test_ids: list[str]
    touched_ids: set[str] = field(default_factory=set)  # every id seen by stats/SMOTE/gradients


def train(sessions: Sequence[FeaturizedSession], config: Config | None = None) -> TrainResult:
    cfg = config or Config()
    tc = cfg.train
    if len(sessions) < 10:
        raise ConfigError("training needs at least 10 sessions")
    train_set, test_set = split_sessions(sessions, tc.split, tc.seed)
    n_pos = sum(s.anomalous for s in train_set)
    if n_pos == 0 or n_pos == len(train_set):
        raise ConfigError("training split must contain both normal and anomalous sessions")

    touched: set[str] = set()
    touched.update(s.session_id for s in train_set)
    standardizer = standardize(np.stack([s.x_raw for s in train_set]))
    augmented = smote_oversample(train_set, tc.smote_k, tc.seed + 1, standardizer, tc.smote)
    log.info("training on %d sessions (%d after oversampling), %d held out",
             len(train_set), len(augmented), len(test_set))

    net = Network(cfg.model, seed=tc.seed)
    params = net.parameters()
    opt = Adam(params, tc.lr, tc.betas, tc.adam_eps, tc.grad_clip)
    rng = np.random.default_rng(tc.seed + 2)
    history: list[EpochRecord] = []
    batch_losses: list[LossParts] = []

    lengths = np.array([len(s) for s in augmented])
    for epoch in range(1, tc.epochs + 1):
        opt.lr = lr_at(tc, epoch)
        sums = np.zeros(3)
        for idx in _bucketed_batches(lengths, tc.batch_size, rng):
            chunk = [augmented[i] for i in idx]
            touched.update(s.session_id.split("#")[0] for s in chunk)
            batch = make_batch(chunk, standardizer)
            parts = _train_step(net, opt, batch, tc.lambda_gate)
            batch_losses.append(parts)
            sums += np.array([parts.bce, parts.l_g, parts.total]) * len(chunk)
        sums /= len(augmented)
        history.append(EpochRecord(epoch, *map(float, sums)))
        log.info("epoch %d: bce=%.5f l_g=%.5f total=%.5f", epoch, *sums)

    meta = {
        "format": "insider_ssm.detector",
        "config": cfg.to_dict(),
        "test_ids": [s.session_id for s in test_set],
    }
    detector = Detector(net, standardizer, meta)
    return TrainResult(detector, history, batch_losses,
                       [s.session_id for s in train_set], [s.session_id for s in test_set], touched)


def lr_at(tc, epoch: int) -> float:
    """Learning rate for a 1-based epoch: constant, or half-cosine decay to 5% of ``lr``."""
    if tc.lr_schedule == "constant" or tc.epochs == 1:
        return tc.lr
    frac = (epoch - 1) / (tc.epochs - 1)
    return tc.lr * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * frac)))


def _bucketed_batches(lengths: np.ndarray, batch_size: int, rng: np.random.Generator,
                      pool: int = 16) -> list[np.ndarray]:
    """Shuffle, sort by length inside pools of ``pool`` batches, then shuffle batch order.

    Keeps padding low without making batch composition deterministic across epochs.
    """
    order = rng.permutation(len(lengths))
    batches = []
    span = batch_size * pool
    for start in range(0, len(order), span):
        block = order[start : start + span]
        block = block[np.argsort(lengths[block], kind="stable")]
        batches.extend(block[i : i + batch_size] for i in range(0, len(block), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def _train_step(net: Network, opt: Adam, batch: Batch, lambda_gate: float) -> LossParts:
    net.zero_grads()
    p, g, back = net(batch.s_b, batch.s_c, batch.x, train=True)
    parts, dp, dg = total_loss(p, batch.y, g, lambda_gate, batch.mask)
    back(dp, dg)
    opt.step()
    return parts


def write_history(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "bce", "l_g", "total"])
        for r in history:
            w.writerow([r.epoch, repr(r.bce), repr(r.l_g), repr(r.total)])
