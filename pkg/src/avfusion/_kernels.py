"""Compiled inner loops for the LSTM recurrence and row scatter-add.

Arrays are time-major: ``(T, B, width)``. Gate order inside the ``4d`` axis is
input, forget, output, candidate.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _sigmoid(x):
    # exp(-x) may overflow to inf for very negative x, giving exactly 0
    return 1.0 / (1.0 + math.exp(-x))


@njit(cache=True, inline="always")
def _tanh(x):
    # libm tanh is ~3x slower than exp on this path; absolute error stays ~1e-16
    return 2.0 / (1.0 + math.exp(-2.0 * x)) - 1.0


@njit(cache=True)
def lstm_forward(zx, WhT, h0, c0):
    T, B, four_d = zx.shape
    d = four_d // 4
    hs = np.empty((T, B, d))
    cs = np.empty((T, B, d))
    tcs = np.empty((T, B, d))
    gates = np.empty((T, B, four_d))
    h = h0.copy()
    c = c0.copy()
    for t in range(T):
        z = h @ WhT
        for b in range(B):
            for j in range(d):
                i_g = _sigmoid(z[b, j] + zx[t, b, j])
                f_g = _sigmoid(z[b, d + j] + zx[t, b, d + j])
                o_g = _sigmoid(z[b, 2 * d + j] + zx[t, b, 2 * d + j])
                g_g = _tanh(z[b, 3 * d + j] + zx[t, b, 3 * d + j])
                cn = f_g * c[b, j] + i_g * g_g
                tc = _tanh(cn)
                c[b, j] = cn
                h[b, j] = o_g * tc
                tcs[t, b, j] = tc
                gates[t, b, j] = i_g
                gates[t, b, d + j] = f_g
                gates[t, b, 2 * d + j] = o_g
                gates[t, b, 3 * d + j] = g_g
        hs[t] = h
        cs[t] = c
    return hs, cs, tcs, gates


@njit(cache=True)
def lstm_backward(g_hs, gates, cs, tcs, c0, Wh):
    """Gradient w.r.t. the pre-activations ``z_t`` for every step."""
    T, B, d = g_hs.shape
    dz = np.empty((T, B, 4 * d))
    dh_next = np.zeros((B, d))
    dc_next = np.zeros((B, d))
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for j in range(d):
                i_g = gates[t, b, j]
                f_g = gates[t, b, d + j]
                o_g = gates[t, b, 2 * d + j]
                g_g = gates[t, b, 3 * d + j]
                tc = tcs[t, b, j]
                c_prev = cs[t - 1, b, j] if t > 0 else c0[b, j]
                dh = g_hs[t, b, j] + dh_next[b, j]
                dc = dh * o_g * (1.0 - tc * tc) + dc_next[b, j]
                dz[t, b, j] = dc * g_g * i_g * (1.0 - i_g)
                dz[t, b, d + j] = dc * c_prev * f_g * (1.0 - f_g)
                dz[t, b, 2 * d + j] = dh * tc * o_g * (1.0 - o_g)
                dz[t, b, 3 * d + j] = dc * i_g * (1.0 - g_g * g_g)
                dc_next[b, j] = dc * f_g
        dh_next = dz[t] @ Wh
    return dz


@njit(cache=True)
def scatter_add_rows(out, rows, values):
    """``out[rows[n]] += values[n]`` with repeated rows accumulated."""
    for n in range(rows.shape[0]):
        r = rows[n]
        for j in range(values.shape[1]):
            out[r, j] += values[n, j]
    return out
