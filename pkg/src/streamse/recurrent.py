"""Recurrent kernels for the spectral GRU and the temporal LSTM.

The GRU runs along 33 compressed frequency positions inside every frame, so its step
count is fixed by the frame and not amortised over time; it is compiled with numba.
The LSTM advances one time step per chunk across all frequency bins at once, which is a
single BLAS call per step.

Hidden-state arithmetic modes: 0 float, 1 bfloat16 operands, 2 int8 operands.
"""

from __future__ import annotations

import math

import numba
import numpy as np

FLOAT, BF16, INT8 = 0, 1, 2

_TWO_M126 = 2.0 ** -126
_TWO_133 = 2.0 ** 133


@numba.njit(cache=True)
def _bf16(v):
    f = np.float32(v)
    if f == 0.0 or not math.isfinite(f):
        return float(f)
    a = abs(f)
    if a < _TWO_M126:
        return np.rint(float(f) * _TWO_133) / _TWO_133
    m, e = math.frexp(float(f))
    return math.ldexp(np.rint(m * 256.0) / 256.0, e)


@numba.njit(cache=True)
def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


@numba.njit(cache=True)
def _hq(v, mode, hs, hz, qmin, qmax):
    """Hidden value as fed to the recurrent matrix product."""
    if mode == 2:
        q = np.rint(v / hs) + hz
        if q < qmin:
            q = qmin
        elif q > qmax:
            q = qmax
        return q - hz
    if mode == 1:
        return _bf16(v)
    return v


@numba.njit(cache=True)
def _hstore(v, mode, hs, hz, qmin, qmax):
    """New hidden value as kept in the state (requantized at its activation site)."""
    if mode == 2:
        return hs * _hq(v, 2, hs, hz, qmin, qmax)
    if mode == 1:
        return _bf16(v)
    return v


@numba.njit(cache=True, fastmath=True)
def gru_bidir(gi, whh, gscale, bhh, mode, hs, hz, qmin, qmax):
    """Bidirectional GRU over axis 1 of ``gi``.

    gi: (B, L, 2, 3H) input projections including ``b_ih``. whh: (2, 3H, H), in int8 mode
    holding integer values. gscale: (2, 3H) multiplier applied to the hidden product.
    Returns (B, L, 2H) with the forward direction first.
    """
    nb, nl, nd, g3 = gi.shape
    nh = g3 // 3
    out = np.empty((nb, nl, nd * nh))
    h = np.empty(nh)
    hv = np.empty(nh)
    gh = np.empty(g3)
    for b in range(nb):
        for d in range(nd):
            h[:] = 0.0
            for s in range(nl):
                t = s if d == 0 else nl - 1 - s
                for k in range(nh):
                    hv[k] = _hq(h[k], mode, hs, hz, qmin, qmax)
                for g in range(g3):
                    acc = 0.0
                    for k in range(nh):
                        acc += whh[d, g, k] * hv[k]
                    acc = acc * gscale[d, g] + bhh[d, g]
                    if mode == 1:
                        acc = _bf16(acc)
                    gh[g] = acc
                for j in range(nh):
                    r = _sig(gi[b, t, d, j] + gh[j])
                    z = _sig(gi[b, t, d, nh + j] + gh[nh + j])
                    n = math.tanh(gi[b, t, d, 2 * nh + j] + r * gh[2 * nh + j])
                    hn = (1.0 - z) * n + z * h[j]
                    h[j] = _hstore(hn, mode, hs, hz, qmin, qmax)
                    out[b, t, d * nh + j] = h[j]
    return out


def gru_bidir_float(gi, whh, bhh):
    """Float-mode ``gru_bidir`` vectorised across the batch; for the large offline batches.

    Same recurrence as the scalar kernel; only the summation order of the hidden product
    differs, which moves results by rounding error alone.
    """
    nb, nl, nd, g3 = gi.shape
    nh = g3 // 3
    out = np.empty((nb, nl, nd * nh))
    half = np.full(g3, 0.5)
    half[2 * nh:] = 1.0
    for d in range(nd):
        wt = np.ascontiguousarray(whh[d].T)
        h = np.zeros((nb, nh))
        for s in range(nl):
            t = s if d == 0 else nl - 1 - s
            gh = h @ wt + bhh[d]
            x = gi[:, t, d]
            rz = 0.5 * np.tanh(0.5 * (x[:, :2 * nh] + gh[:, :2 * nh])) + 0.5
            n = np.tanh(x[:, 2 * nh:] + rz[:, :nh] * gh[:, 2 * nh:])
            z = rz[:, nh:]
            h = (1.0 - z) * n + z * h
            out[:, t, d * nh:(d + 1) * nh] = h
    return out


def lstm_steps(gx, h, c, hidden_matmul, hstore):
    """Unidirectional LSTM over axis 0 of ``gx``.

    gx: (T, B, 4H) input projections including ``b_ih``; ``hidden_matmul(h)`` returns the
    recurrent contribution including ``b_hh``; ``hstore`` maps a fresh hidden state to the
    value kept in the carry. Returns outputs (T, B, H) and the final ``(h, c)``.
    """
    nt = gx.shape[0]
    nh = h.shape[-1]
    out = np.empty(gx.shape[:2] + (nh,))
    # sigmoid(x) = (1 + tanh(x / 2)) / 2, so one tanh call covers all four gates
    half = np.full(4 * nh, 0.5)
    half[2 * nh:3 * nh] = 1.0
    for t in range(nt):
        th = np.tanh((gx[t] + hidden_matmul(h)) * half)
        sg = 0.5 * th + 0.5
        c = sg[:, nh:2 * nh] * c + sg[:, :nh] * th[:, 2 * nh:3 * nh]
        h = hstore(sg[:, 3 * nh:] * np.tanh(c))
        out[t] = h
    return out, h, c
