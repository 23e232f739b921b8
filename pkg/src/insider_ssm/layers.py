"""Differentiable building blocks. Every layer maps arrays with arbitrary leading
(batch, time) axes and returns ``(out, pullback)``."""

from __future__ import annotations

import numpy as np

from .config import ConfigError
from .tensor import Module, Parameter, ShapeError


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def silu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (silu(x), d silu / dx)."""
    s = sigmoid(x)
    return x * s, s * (1.0 + x * (1.0 - s))


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, scale: float = 1.0):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter(rng.normal(0.0, scale / np.sqrt(n_in), size=(n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: np.ndarray):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Linear expects last axis {self.n_in}, got shape {x.shape}")
        y = x @ self.weight.value
        if self.bias is not None:
            y = y + self.bias.value

        def back(g: np.ndarray) -> np.ndarray:
            self.weight.accumulate(_flat(x).T @ _flat(g))
            if self.bias is not None:
                self.bias.accumulate(_flat(g).sum(axis=0))
            return g @ self.weight.value.T

        return y, back


class Embedding(Module):
    """Lookup table; row 0 is padding and never receives gradient."""

    def __init__(self, n_rows: int, dim: int, rng: np.random.Generator):
        table = rng.normal(0.0, 1.0, size=(n_rows, dim))
        table[0] = 0.0
        self.table = Parameter(table)

    def __call__(self, ids: np.ndarray):
        ids = np.asarray(ids)
        if not np.issubdtype(ids.dtype, np.integer):
            raise TypeError("embedding ids must be integers")
        if ids.size and (ids.min() < 0 or ids.max() >= self.table.shape[0]):
            raise ValueError(f"embedding id outside [0, {self.table.shape[0] - 1}]")
        out = self.table.value[ids]

        def back(g: np.ndarray):
            grad = np.zeros_like(self.table.value)
            np.add.at(grad, ids.reshape(-1), _flat(g))
            grad[0] = 0.0
            self.table.accumulate(grad)
            return None

        return out, back


class LayerNorm(Module):
    """Normalizes over the last axis with learned scale and shift."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.scale = Parameter(np.ones(dim))
        self.shift = Parameter(np.zeros(dim))

    def __call__(self, x: np.ndarray):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + self.eps)
        xhat = xc * inv
        y = xhat * self.scale.value + self.shift.value

        def back(g: np.ndarray) -> np.ndarray:
            self.scale.accumulate(_flat(g * xhat).sum(axis=0))
            self.shift.accumulate(_flat(g).sum(axis=0))
            gx = g * self.scale.value
            return inv * (
                gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            )

        return y, back


class BatchNorm(Module):
    """Normalizes each feature over the batch axis (axis 0).

    ``feature_shape`` is everything after the batch axis. Running statistics use
    the unbiased batch variance, as is conventional.
    """

    def __init__(self, feature_shape: tuple[int, ...], eps: float = 1e-5, momentum: float = 0.1):
        self.eps, self.momentum = eps, momentum
        self.scale = Parameter(np.ones(feature_shape))
        self.shift = Parameter(np.zeros(feature_shape))
        self.buffers = {
            "running_mean": np.zeros(feature_shape),
            "running_var": np.ones(feature_shape),
            "n_batches": np.zeros(1),
        }

    def __call__(self, x: np.ndarray, train: bool = True):
        gamma = self.scale.value
        if train:
            n = x.shape[0]
            mu = x.mean(axis=0)
            xc = x - mu
            var = (xc * xc).mean(axis=0)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = xc * inv
            m = self.momentum
            unbiased = var * n / (n - 1) if n > 1 else var
            self.buffers["running_mean"][...] = (1 - m) * self.buffers["running_mean"] + m * mu
            self.buffers["running_var"][...] = (1 - m) * self.buffers["running_var"] + m * unbiased
            self.buffers["n_batches"][0] += 1

            def back(g: np.ndarray) -> np.ndarray:
                self.scale.accumulate((g * xhat).sum(axis=0))
                self.shift.accumulate(g.sum(axis=0))
                gx = g * gamma
                return inv * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))

        else:
            if self.buffers["n_batches"][0] == 0:
                raise ConfigError("batch norm used in eval mode before any training statistics exist")
            inv = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (x - self.buffers["running_mean"]) * inv

            def back(g: np.ndarray) -> np.ndarray:
                self.scale.accumulate((g * xhat).sum(axis=0))
                self.shift.accumulate(g.sum(axis=0))
                return g * gamma * inv

        return xhat * gamma + self.shift.value, back
