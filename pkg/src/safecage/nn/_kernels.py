"""Compiled LSTM recurrence (gate order i, f, g, o)."""
import numpy as np
from numba import njit


@njit(cache=True)
def lstm_forward(xproj, wh, h0, c0):
    T, B, G = xproj.shape
    H = G // 4
    hs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    gates = np.empty((T, B, G))
    h = h0.copy()
    c = c0.copy()
    z = np.empty(G)
    for t in range(T):
        for b in range(B):
            for j in range(G):
                acc = xproj[t, b, j]
                for k in range(H):
                    acc += h[b, k] * wh[k, j]
                z[j] = acc
            for k in range(H):
                i = 1.0 / (1.0 + np.exp(-z[k]))
                f = 1.0 / (1.0 + np.exp(-z[H + k]))
                g = np.tanh(z[2 * H + k])
                o = 1.0 / (1.0 + np.exp(-z[3 * H + k]))
                gates[t, b, k] = i
                gates[t, b, H + k] = f
                gates[t, b, 2 * H + k] = g
                gates[t, b, 3 * H + k] = o
                c[b, k] = f * c[b, k] + i * g
                h[b, k] = o * np.tanh(c[b, k])
                hs[t, b, k] = h[b, k]
                cs[t, b, k] = c[b, k]
    return hs, cs, gates


@njit(cache=True)
def lstm_backward(dhs, gates, cs, c0, wh):
    """Pre-activation gate gradients plus gradients w.r.t. the initial state."""
    T, B, H = dhs.shape
    G = 4 * H
    dz = np.empty((T, B, G))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for k in range(H):
                i = gates[t, b, k]
                f = gates[t, b, H + k]
                g = gates[t, b, 2 * H + k]
                o = gates[t, b, 3 * H + k]
                c_prev = cs[t - 1, b, k] if t > 0 else c0[b, k]
                tc = np.tanh(cs[t, b, k])
                dh = dhs[t, b, k] + dh_next[b, k]
                dc = dc_next[b, k] + dh * o * (1.0 - tc * tc)
                dz[t, b, k] = dc * g * i * (1.0 - i)
                dz[t, b, H + k] = dc * c_prev * f * (1.0 - f)
                dz[t, b, 2 * H + k] = dc * i * (1.0 - g * g)
                dz[t, b, 3 * H + k] = dh * tc * o * (1.0 - o)
                dc_next[b, k] = dc * f
            for k in range(H):
                acc = 0.0
                for j in range(G):
                    acc += dz[t, b, j] * wh[k, j]
                dh_next[b, k] = acc
    return dz, dh_next, dc_next
