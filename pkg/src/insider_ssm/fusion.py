"""Statistics-conditioned gated fusion of the two encoder channels and the MLP head."""

from __future__ import annotations

import numpy as np

from .layers import LayerNorm, Linear, sigmoid
from .tensor import Module, Parameter, ShapeError


def session_pool(e_x: np.ndarray):
    """Mean over the token axis: ``[..., N, d] -> [..., d]``."""
    n = e_x.shape[-2]

    def back(g: np.ndarray) -> np.ndarray:
        return np.repeat(g[..., None, :] / n, n, axis=-2)

    return e_x.mean(axis=-2), back


class Gate(Module):
    """G = sigmoid(W_g e + b_g), one gate value per model dimension."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.W_g = Parameter(rng.normal(0.0, 1.0 / np.sqrt(d_model), size=(d_model, d_model)))
        self.b_g = Parameter(np.zeros(d_model))

    def __call__(self, e: np.ndarray):
        g = sigmoid(e @ self.W_g.value.T + self.b_g.value)

        def back(dg: np.ndarray) -> np.ndarray:
            dpre = dg * g * (1.0 - g)
            flat_d = dpre.reshape(-1, dpre.shape[-1])
            self.W_g.accumulate(flat_d.T @ e.reshape(-1, e.shape[-1]))
            self.b_g.accumulate(flat_d.sum(axis=0))
            return dpre @ self.W_g.value

        return g, back


def mix(h_b: np.ndarray, h_c: np.ndarray, g: np.ndarray):
    """Per-dimension convex combination g*h_b + (1-g)*h_c; ``g`` is broadcast over time."""
    if h_b.shape != h_c.shape:
        raise ShapeError(f"channel shapes differ: {h_b.shape} vs {h_c.shape}")
    gt = g[..., None, :]
    out = gt * h_b + (1.0 - gt) * h_c

    def back(d: np.ndarray):
        return gt * d, (1.0 - gt) * d, (d * (h_b - h_c)).sum(axis=-2)

    return out, back


class Fusion(Module):
    """LayerNorm(mix + h_b + h_c), or LayerNorm(mix) with ``residual='mix_only'``."""

    def __init__(self, d_model: int, residual: str = "paper", eps: float = 1e-5):
        self.residual = residual
        self.norm = LayerNorm(d_model, eps)

    def __call__(self, h_b: np.ndarray, h_c: np.ndarray, g: np.ndarray):
        m, mix_back = mix(h_b, h_c, g)
        pre = m + h_b + h_c if self.residual == "paper" else m
        out, norm_back = self.norm(pre)

        def back(d: np.ndarray):
            dpre = norm_back(d)
            db, dc, dg = mix_back(dpre)
            if self.residual == "paper":
                db, dc = db + dpre, dc + dpre
            return db, dc, dg

        return out, back


def concat_final(f: np.ndarray, e: np.ndarray):
    """Append the session vector to every time step: ``[..., T, d] + [..., d] -> [..., T, 2d]``."""
    d = f.shape[-1]
    out = np.concatenate([f, np.broadcast_to(e[..., None, :], f.shape)], axis=-1)

    def back(g: np.ndarray):
        return g[..., :d], g[..., d:].sum(axis=-2)

    return out, back


class MLPHead(Module):
    """Per-step probability: affine/ReLU layers then a single sigmoid output."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator, n_layers: int = 3):
        widths = [d_in] + [hidden] * (n_layers - 1) + [1]
        self.layers = [
            Linear(a, b, rng, scale=np.sqrt(2.0) if i < n_layers - 1 else 1.0)
            for i, (a, b) in enumerate(zip(widths, widths[1:]))
        ]

    def __call__(self, f: np.ndarray):
        backs = []
        h = f
        for i, layer in enumerate(self.layers):
            h, lb = layer(h)
            if i < len(self.layers) - 1:
                active = h > 0
                h = np.where(active, h, 0.0)
                backs.append((lb, active))
            else:
                backs.append((lb, None))
        p = sigmoid(h[..., 0])

        def back(dp: np.ndarray) -> np.ndarray:
            g = (dp * p * (1.0 - p))[..., None]
            for lb, active in reversed(backs):
                if active is not None:
                    g = g * active
                g = lb(g)
            return g

        return p, back
