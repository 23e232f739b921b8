"""Fused selective-scan kernels.

``scan_forward``/``scan_backward`` use numba when importable and fall back to the
vectorized numpy versions otherwise. Both paths compute identical quantities:

    h_t = exp(delta_t * A) * h_{t-1} + v_t * B_t,   y_t = <C_t, h_t>,   h_0 = 0

with ``v = delta * u``. Shapes: delta, v ``[B, T, D]``; A ``[D, N]``; B, C ``[B, T, N]``.
"""

from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None


def scan_forward_numpy(delta, A, v, Bm, Cm, keep_states=True):
    n_b, n_t, d = delta.shape
    decay = np.exp(delta[..., None] * A)
    drive = v[..., None] * Bm[:, :, None, :]
    H = np.empty_like(decay)
    h = np.zeros((n_b, d, A.shape[1]))
    for t in range(n_t):
        h = decay[:, t] * h + drive[:, t]
        H[:, t] = h
    y = np.matmul(H, Cm[..., None])[..., 0]
    return y, (H if keep_states else None)


def scan_backward_numpy(gy, delta, A, v, Bm, Cm, H):
    n_b, n_t, d = delta.shape
    decay = np.exp(delta[..., None] * A)
    gC = np.matmul(gy[:, :, None, :], H)[:, :, 0, :]
    gH = gy[..., None] * Cm[:, :, None, :]
    G = np.empty_like(gH)
    acc = np.zeros((n_b, d, A.shape[1]))
    for t in range(n_t - 1, -1, -1):
        acc = gH[:, t] + acc
        G[:, t] = acc
        acc = acc * decay[:, t]
    H_prev = np.zeros_like(H)
    H_prev[:, 1:] = H[:, :-1]
    g_pre = G * H_prev * decay  # gradient w.r.t. delta * A
    g_A = np.einsum("btdn,btd->dn", g_pre, delta)
    g_delta = np.einsum("btdn,dn->btd", g_pre, A)
    g_v = np.matmul(G, Bm[..., None])[..., 0]
    g_B = np.matmul(v[:, :, None, :], G)[:, :, 0, :]
    return g_delta, g_A, g_v, g_B, gC


if numba is not None:

    @numba.njit(cache=True)
    def _fwd_kernel(delta, A, v, Bm, Cm, y, H, keep):
        # the decay exp(delta * A) is formed in the inner loop: materializing it costs
        # more memory traffic than the scan itself
        n_b, n_t, d_in = delta.shape
        n_s = A.shape[1]
        h = np.zeros((d_in, n_s))
        for b in range(n_b):
            h[:, :] = 0.0
            for t in range(n_t):
                B_t, C_t = Bm[b, t], Cm[b, t]
                for d in range(d_in):
                    dl = delta[b, t, d]
                    vt = v[b, t, d]
                    acc = 0.0
                    for n in range(n_s):
                        hn = np.exp(dl * A[d, n]) * h[d, n] + vt * B_t[n]
                        h[d, n] = hn
                        acc += hn * C_t[n]
                    y[b, t, d] = acc
                if keep:
                    H[b, t] = h

    @numba.njit(cache=True)
    def _bwd_kernel(gy, delta, A, v, Bm, Cm, H, g_delta, g_A, g_v, g_B, g_C):
        n_b, n_t, d_in = delta.shape
        n_s = A.shape[1]
        carry = np.zeros((d_in, n_s))
        zero = np.zeros((d_in, n_s))
        for b in range(n_b):
            carry[:, :] = 0.0
            for t in range(n_t - 1, -1, -1):
                H_t, B_t, C_t = H[b, t], Bm[b, t], Cm[b, t]
                H_prev = H[b, t - 1] if t > 0 else zero
                gB_t, gC_t = g_B[b, t], g_C[b, t]
                for d in range(d_in):
                    gyt = gy[b, t, d]
                    dl = delta[b, t, d]
                    vt = v[b, t, d]
                    gdl = 0.0
                    gvt = 0.0
                    for n in range(n_s):
                        g = gyt * C_t[n] + carry[d, n]
                        gC_t[n] += gyt * H_t[d, n]
                        dec = np.exp(dl * A[d, n])
                        gp = g * H_prev[d, n] * dec  # gradient w.r.t. delta * A
                        gdl += gp * A[d, n]
                        g_A[d, n] += gp * dl
                        gvt += g * B_t[n]
                        gB_t[n] += g * vt
                        carry[d, n] = g * dec
                    g_delta[b, t, d] = gdl
                    g_v[b, t, d] = gvt


def scan_forward(delta, A, v, Bm, Cm, keep_states=True):
    """Returns ``(y, H)``; H holds every hidden state, or is None when ``keep_states`` is off."""
    if numba is None:
        return scan_forward_numpy(delta, A, v, Bm, Cm, keep_states)
    y = np.empty(delta.shape)
    H = np.empty(delta.shape + (A.shape[1],)) if keep_states else np.empty((1, 1) + A.shape)
    _fwd_kernel(delta, A, v, Bm, Cm, y, H, keep_states)
    return y, (H if keep_states else None)


def scan_backward(gy, delta, A, v, Bm, Cm, H):
    """Returns ``(g_delta, g_A, g_v, g_B, g_C)``."""
    if numba is None:
        return scan_backward_numpy(gy, delta, A, v, Bm, Cm, H)
    g_delta = np.empty_like(delta)
    g_v = np.empty_like(delta)
    g_A = np.zeros_like(A)
    g_B = np.zeros_like(Bm)
    g_C = np.zeros_like(Cm)
    _bwd_kernel(np.ascontiguousarray(gy), delta, A, v, Bm, Cm, H, g_delta, g_A, g_v, g_B, g_C)
    return g_delta, g_A, g_v, g_B, g_C
