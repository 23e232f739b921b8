"""Input embeddings and the selective state-space (Mamba-style) sequence encoder.

Arrays are batched: sequences are ``[B, T, D]``. Right-padding is safe because the
scan is causal; padded steps never influence earlier outputs.
"""

from __future__ import annotations

import numpy as np

from .scan import scan_backward, scan_forward
from .layers import BatchNorm, Embedding, LayerNorm, Linear, sigmoid, silu, softplus
from .tensor import Module, Parameter, ShapeError


class BehaviorEmbedding(Module):
    def __init__(self, n_ids: int, d_model: int, rng: np.random.Generator):
        self.n_ids = n_ids
        self.lookup = Embedding(n_ids + 1, d_model, rng)

    def __call__(self, s_b: np.ndarray, allow_padding: bool = True):
        s_b = np.asarray(s_b)
        lo = 0 if allow_padding else 1
        if s_b.size and (s_b.min() < lo or s_b.max() > self.n_ids):
            raise ValueError(f"behavior id outside [{lo}, {self.n_ids}]")
        return self.lookup(s_b)


class IntervalEmbedding(Module):
    """Affine lift of log1p(gap) to d_model channels."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.proj = Linear(1, d_model, rng)

    def __call__(self, s_c: np.ndarray):
        s_c = np.asarray(s_c, dtype=np.float64)
        if np.any(s_c < 0):
            raise ValueError("interval values must be non-negative")
        y, proj_back = self.proj(np.log1p(s_c)[..., None])

        def back(g: np.ndarray) -> np.ndarray:
            return proj_back(g)[..., 0] / (1.0 + s_c)

        return y, back


class StatEmbedding(Module):
    """Lift the statistics vector to tokens, then batch-normalize.

    ``per_feature``: each of the N features gets its own 1 -> d_model affine map,
    giving ``[B, N, d_model]``. ``pooled``: a single N -> d_model map, ``[B, 1, d_model]``.
    """

    def __init__(self, n_stats: int, d_model: int, rng: np.random.Generator, mode: str = "per_feature",
                 eps: float = 1e-5, momentum: float = 0.1):
        self.mode = mode
        self.n_stats = n_stats
        if mode == "per_feature":
            self.weight = Parameter(rng.normal(0.0, 1.0, size=(n_stats, d_model)))
            self.bias = Parameter(np.zeros((n_stats, d_model)))
            self.bn = BatchNorm((n_stats, d_model), eps, momentum)
        else:
            self.proj = Linear(n_stats, d_model, rng)
            self.bn = BatchNorm((1, d_model), eps, momentum)

    def __call__(self, x: np.ndarray, train: bool = True):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_stats:
            raise ShapeError(f"stat embedding expects [B, {self.n_stats}], got {x.shape}")
        if self.mode == "per_feature":
            z = x[:, :, None] * self.weight.value + self.bias.value
        else:
            z, proj_back = self.proj(x)
            z = z[:, None, :]
        y, bn_back = self.bn(z, train=train)

        def back(g: np.ndarray) -> np.ndarray:
            gz = bn_back(g)
            if self.mode == "per_feature":
                self.weight.accumulate((gz * x[:, :, None]).sum(axis=0))
                self.bias.accumulate(gz.sum(axis=0))
                return (gz * self.weight.value).sum(axis=-1)
            return proj_back(gz[:, 0, :])

        return y, back


class SelectiveSSM(Module):
    """Diagonal selective state space scan over ``[B, T, d_inner]``.

    delta = softplus(u W_dt + b_dt), B_t = u W_B, C_t = u W_C,
    h_t = exp(delta_t A) * h_{t-1} + delta_t u_t B_t, y_t = <C_t, h_t>, h_0 = 0.
    A = -exp(A_log) keeps every decay strictly inside (0, 1).
    """

    def __init__(self, d_inner: int, n_state: int, rng: np.random.Generator,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        self.d_inner, self.n_state = d_inner, n_state
        self.A_log = Parameter(np.log(np.tile(np.arange(1, n_state + 1, dtype=np.float64), (d_inner, 1))))
        self.dt_proj = Linear(d_inner, d_inner, rng, scale=0.1)
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=d_inner))
        self.dt_proj.bias.value[:] = dt + np.log(-np.expm1(-dt))  # inverse softplus
        self.b_proj = Linear(d_inner, n_state, rng, bias=False)
        self.c_proj = Linear(d_inner, n_state, rng, bias=False)

    @property
    def A(self) -> np.ndarray:
        return -np.exp(self.A_log.value)

    def __call__(self, u: np.ndarray, grad: bool = True):
        if u.ndim != 3 or u.shape[-1] != self.d_inner:
            raise ShapeError(f"SSM expects [B, T, {self.d_inner}], got {u.shape}")
        A = self.A
        dt_lin, dt_back = self.dt_proj(u)
        delta = softplus(dt_lin)
        Bm, b_back = self.b_proj(u)
        Cm, c_back = self.c_proj(u)

        v = delta * u
        y, H = scan_forward(delta, A, v, Bm, Cm, keep_states=grad)

        def back(gy: np.ndarray) -> np.ndarray:
            if H is None:
                raise RuntimeError("forward ran with grad=False; no states kept for backward")
            g_delta, g_A, g_v, g_B, g_C = scan_backward(gy, delta, A, v, Bm, Cm, H)
            self.A_log.accumulate(g_A * A)  # dA/dA_log = A
            g_delta += g_v * u
            gu = g_v * delta
            gu += dt_back(g_delta * sigmoid(dt_lin))
            gu += b_back(g_B)
            gu += c_back(g_C)
            return gu

        return y, back


class MambaBlock(Module):
    """in-projection to (x, z), selective scan on x, SiLU(z) gate, out-projection."""

    def __init__(self, d_model: int, d_inner: int, n_state: int, rng: np.random.Generator):
        self.d_inner = d_inner
        self.in_proj = Linear(d_model, 2 * d_inner, rng, bias=False)
        self.ssm = SelectiveSSM(d_inner, n_state, rng)
        self.out_proj = Linear(d_inner, d_model, rng, bias=False)

    def __call__(self, x: np.ndarray, grad: bool = True):
        xz, in_back = self.in_proj(x)
        xs, z = xz[..., : self.d_inner], xz[..., self.d_inner :]
        y, ssm_back = self.ssm(xs, grad)
        gz, dgz = silu(z)
        out, out_back = self.out_proj(y * gz)

        def back(g: np.ndarray) -> np.ndarray:
            gyz = out_back(g)
            gxs = ssm_back(gyz * gz)
            return in_back(np.concatenate([gxs, gyz * y * dgz], axis=-1))

        return out, back


class MambaEncoder(Module):
    """Residual stack: x <- x + block(LayerNorm(x))."""

    def __init__(self, d_model: int, n_state: int, n_layers: int, rng: np.random.Generator,
                 expand: int = 2, ln_eps: float = 1e-5):
        if n_layers < 1:
            raise ValueError("encoder needs at least one layer")
        self.norms = [LayerNorm(d_model, ln_eps) for _ in range(n_layers)]
        self.blocks = [MambaBlock(d_model, expand * d_model, n_state, rng) for _ in range(n_layers)]

    def __call__(self, e: np.ndarray, grad: bool = True):
        """``grad=False`` skips storing scan states; the returned ``back`` then raises."""
        backs = []
        x = e
        for norm, block in zip(self.norms, self.blocks):
            u, n_back = norm(x)
            o, b_back = block(u, grad)
            x = x + o
            backs.append((n_back, b_back))

        def back(g: np.ndarray) -> np.ndarray:
            for n_back, b_back in reversed(backs):
                g = g + n_back(b_back(g))
            return g

        return x, back
