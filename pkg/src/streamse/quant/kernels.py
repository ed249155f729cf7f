"""Integer execution path: int8 x int8 products accumulated as 32-bit integers.

Accumulation is carried out on float64 arrays holding integer values. Every partial sum
is bounded by ``2**7 * 2**7 * K < 2**31`` for ``K < 2**17`` and is therefore exact in a
53-bit mantissa, which lets the BLAS do the integer work.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import QuantizedTensor, QuantSpec, dequantize, quantize

MAX_K = 2 ** 17
INT32_MIN, INT32_MAX = -(2 ** 31), 2 ** 31 - 1


def bias_to_int32(bias, x_scale: float, w_scale) -> np.ndarray:
    """Float bias pre-scaled into the accumulator domain ``S_x * S_w``."""
    b = np.rint(np.asarray(bias, dtype=np.float64) / (x_scale * np.asarray(w_scale, dtype=np.float64)))
    return np.clip(b, INT32_MIN, INT32_MAX).astype(np.int32)


def requantize(acc, multiplier, out_spec: QuantSpec) -> QuantizedTensor:
    """``clamp(round(acc * M) + Z_y)`` with ``M = S_x * S_w / S_y`` evaluated in float64."""
    q = np.rint(np.asarray(acc, dtype=np.float64) * multiplier) + out_spec.zero_point
    q = np.clip(q, out_spec.qmin, out_spec.qmax).astype(np.int8)
    return QuantizedTensor(q, out_spec)


def _check_k(k: int):
    if k >= MAX_K:
        raise ValueError(f"reduction length {k} would overflow the int32 accumulator")


def matmul_acc(xc, w_int) -> np.ndarray:
    """Integer accumulation of ``xc @ w_int.T`` for centred activations ``xc = q_x - Z_x``."""
    _check_k(xc.shape[-1])
    return np.asarray(xc, dtype=np.float64) @ np.asarray(w_int, dtype=np.float64).T


def q_matmul(x: QuantizedTensor, w: QuantizedTensor, bias, out_spec: QuantSpec) -> QuantizedTensor:
    """``y = x @ w.T + b`` with ``x`` per-tensor and ``w`` per-output-row quantized.

    ``bias`` is int32 in the ``S_x * S_w`` domain (see :func:`bias_to_int32`), or None.
    """
    acc = matmul_acc(x.centered(), w.q)
    if bias is not None:
        acc = acc + np.asarray(bias, dtype=np.float64)
    m = x.spec.scale * np.asarray(w.spec.scale).reshape(-1) / out_spec.scale
    return requantize(acc, m, out_spec)


def _im2col(xc, ksize, stride):
    """Windows of a channels-first array: (C, *S) -> (*S_out, C * prod(k))."""
    win = sliding_window_view(xc, ksize, axis=tuple(range(1, xc.ndim)))
    sl = (slice(None),) + tuple(slice(None, None, s) for s in stride)
    win = win[sl]
    nd = len(ksize)
    win = np.moveaxis(win, 0, nd)
    return win.reshape(win.shape[:nd] + (-1,))


def conv_acc(xc, w_int, stride=1, padding=0) -> np.ndarray:
    """Integer-valued N-d correlation on centred input; returns (C_out, *S_out)."""
    nd = w_int.ndim - 2
    stride = (stride,) * nd if np.isscalar(stride) else tuple(stride)
    padding = (padding,) * nd if np.isscalar(padding) else tuple(padding)
    xc = np.pad(np.asarray(xc, dtype=np.float64), [(0, 0)] + [(p, p) for p in padding])
    cols = _im2col(xc, w_int.shape[2:], stride)
    acc = matmul_acc(cols, w_int.reshape(w_int.shape[0], -1))
    return np.moveaxis(acc, -1, 0)


def q_conv(x: QuantizedTensor, w: QuantizedTensor, bias, out_spec: QuantSpec, stride=1, padding=0):
    """Quantized convolution. ``x``: (C_in, *S); ``w``: (C_out, C_in, *k), per-channel."""
    acc = conv_acc(x.centered(), w.q, stride, padding)
    nd = acc.ndim - 1
    if bias is not None:
        acc = acc + np.asarray(bias, dtype=np.float64).reshape((-1,) + (1,) * nd)
    m = x.spec.scale * np.asarray(w.spec.scale).reshape((-1,) + (1,) * nd) / out_spec.scale
    return requantize(acc, m, out_spec)


def deconv_acc(xc, w_int, stride=1, padding=0) -> np.ndarray:
    """Transposed convolution as correlation of the zero-stuffed input with the flipped kernel.

    ``w_int`` is laid out (C_out, C_in, *k). Output extent is ``(n - 1) * s + k - 2 * p``.
    """
    nd = w_int.ndim - 2
    stride = (stride,) * nd if np.isscalar(stride) else tuple(stride)
    padding = (padding,) * nd if np.isscalar(padding) else tuple(padding)
    xc = np.asarray(xc, dtype=np.float64)
    k = w_int.shape[2:]
    up = np.zeros((xc.shape[0],) + tuple((n - 1) * s + 1 for n, s in zip(xc.shape[1:], stride)))
    up[(slice(None),) + tuple(slice(None, None, s) for s in stride)] = xc
    pads = [(0, 0)] + [(kk - 1 - p, kk - 1 - p) for kk, p in zip(k, padding)]
    if any(a < 0 for a, _ in pads):
        raise ValueError("padding larger than kernel - 1 is not supported")
    flipped = np.flip(np.asarray(w_int), axis=tuple(range(2, w_int.ndim)))
    return conv_acc(np.pad(up, pads), flipped, 1, 0)


def q_deconv(x: QuantizedTensor, w: QuantizedTensor, bias, out_spec: QuantSpec, stride=1, padding=0):
    acc = deconv_acc(x.centered(), w.q, stride, padding)
    nd = acc.ndim - 1
    if bias is not None:
        acc = acc + np.asarray(bias, dtype=np.float64).reshape((-1,) + (1,) * nd)
    m = x.spec.scale * np.asarray(w.spec.scale).reshape((-1,) + (1,) * nd) / out_spec.scale
    return requantize(acc, m, out_spec)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def q_recurrent_step(cell: str, w_ih: QuantizedTensor, w_hh: QuantizedTensor, b_ih, b_hh,
                     x, state, x_spec: QuantSpec, h_spec: QuantSpec):
    """One GRU or LSTM step with int8 matrix products and floating-point gate arithmetic.

    ``x`` is (batch, in) float, ``state`` is ``h`` for a GRU or ``(h, c)`` for an LSTM.
    The new hidden state is requantized at its activation site; the LSTM cell state stays
    in floating point.
    """
    xq = quantize(x, x_spec)
    h = state if cell == "gru" else state[0]
    hq = quantize(h, h_spec)
    sw_ih = np.asarray(w_ih.spec.scale).reshape(-1)
    sw_hh = np.asarray(w_hh.spec.scale).reshape(-1)
    gx = matmul_acc(xq.centered(), w_ih.q) * (x_spec.scale * sw_ih) + b_ih
    gh = matmul_acc(hq.centered(), w_hh.q) * (h_spec.scale * sw_hh) + b_hh
    hsz = hq.shape[-1]
    if cell == "gru":
        r = _sigmoid(gx[:, :hsz] + gh[:, :hsz])
        z = _sigmoid(gx[:, hsz:2 * hsz] + gh[:, hsz:2 * hsz])
        n = np.tanh(gx[:, 2 * hsz:] + r * gh[:, 2 * hsz:])
        h_new = (1 - z) * n + z * dequantize(hq)
        return dequantize(quantize(h_new, h_spec))
    if cell == "lstm":
        g = gx + gh
        i, f = _sigmoid(g[:, :hsz]), _sigmoid(g[:, hsz:2 * hsz])
        c_new = f * np.asarray(state[1], dtype=np.float64) + i * np.tanh(g[:, 2 * hsz:3 * hsz])
        h_new = _sigmoid(g[:, 3 * hsz:]) * np.tanh(c_new)
        return dequantize(quantize(h_new, h_spec)), c_new
    raise ValueError(f"unknown cell {cell!r}")
