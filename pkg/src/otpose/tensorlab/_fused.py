"""Optional numba-fused kernels for the two memory-bound elementwise chains
(layer normalization and GELU).  numpy chains allocate five to seven
temporaries per call, which dominates step time at training scale; the fused
loops read each operand once.  Everything degrades gracefully to the numpy
expressions in :mod:`ops` when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    AVAILABLE = False

GELU_C = 0.7978845608028654  # sqrt(2/pi)
GELU_A = 0.044715

if AVAILABLE:

    @numba.njit(cache=True, fastmath=True)
    def ln_forward(d2, gain, bias, eps):
        n, L = d2.shape
        y = np.empty_like(d2)
        mu = np.empty(n, dtype=d2.dtype)
        istd = np.empty(n, dtype=d2.dtype)
        for i in range(n):
            s = 0.0
            for j in range(L):
                s += d2[i, j]
            m = s / L
            v = 0.0
            for j in range(L):
                t = d2[i, j] - m
                v += t * t
            inv = 1.0 / np.sqrt(v / L + eps)
            mu[i] = m
            istd[i] = inv
            for j in range(L):
                y[i, j] = (d2[i, j] - m) * inv * gain[j] + bias[j]
        return y, mu, istd

    @numba.njit(cache=True, fastmath=True)
    def ln_backward(g2, d2, mu, istd, gain, need_dx):
        n, L = d2.shape
        dx = np.empty_like(d2) if need_dx else np.empty((0, 0), dtype=d2.dtype)
        dgain = np.zeros(L, dtype=np.float64)
        dbias = np.zeros(L, dtype=np.float64)
        for i in range(n):
            m, inv = mu[i], istd[i]
            s1 = 0.0
            s2 = 0.0
            for j in range(L):
                xh = (d2[i, j] - m) * inv
                dxh = g2[i, j] * gain[j]
                s1 += dxh
                s2 += dxh * xh
                dgain[j] += g2[i, j] * xh
                dbias[j] += g2[i, j]
            if need_dx:
                m1 = s1 / L
                m2 = s2 / L
                for j in range(L):
                    xh = (d2[i, j] - m) * inv
                    dx[i, j] = inv * (g2[i, j] * gain[j] - m1 - xh * m2)
        return dx, dgain, dbias

    @numba.njit(cache=True, fastmath=True)
    def gelu_arg(d):
        flat = d.reshape(d.size)
        out = np.empty_like(flat)
        for i in range(flat.size):
            x = flat[i]
            out[i] = GELU_C * (x + GELU_A * x * x * x)
        return out.reshape(d.shape)

    @numba.njit(cache=True, fastmath=True)
    def gelu_combine(d, t):
        flat = d.reshape(d.size)
        tf = t.reshape(t.size)
        out = np.empty_like(flat)
        for i in range(flat.size):
            out[i] = 0.5 * flat[i] * (1.0 + tf[i])
        return out.reshape(d.shape)

    @numba.njit(cache=True, fastmath=True)
    def gelu_backward(g, t, d):
        gf = g.reshape(g.size)
        tf = t.reshape(t.size)
        df = d.reshape(d.size)
        out = np.empty_like(gf)
        a3 = 3.0 * GELU_A
        for i in range(gf.size):
            x = df[i]
            tt = tf[i]
            du = GELU_C * (1.0 + a3 * x * x)
            out[i] = gf[i] * (0.5 * (1.0 + tt) + 0.5 * x * (1.0 - tt * tt) * du)
        return out.reshape(g.shape)


_MIN_FUSED_SIZE = 4096  # below this the numpy chains win on dispatch cost


def usable(*arrays) -> bool:
    """Fused kernels want sizeable C-contiguous arrays; tiny and 0-d inputs
    stay on the numpy path."""
    return (AVAILABLE and arrays[0].size >= _MIN_FUSED_SIZE
            and all(a.flags.c_contiguous for a in arrays))
