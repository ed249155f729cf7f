"""Low-complexity dual-path time-frequency network.

Layout inside the model is channels-last, ``(time, freq, channels)``; the public helpers
``encode``/``decode`` convert to and from the ``(channels, time, freq)`` convention.

Per block:
    spectral: pad F to a multiple of q, strided conv (kernel = stride = q), bidirectional
        GRU along compressed frequency, transposed conv back, crop, residual add
    temporal: unidirectional LSTM along time for every bin, linear H -> D, residual add
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import dsp
from .config import EngineConfig, ModelConfig
from .quant.plan import Executor, PrecisionPlan

_ACTIVATIONS = {
    "none": lambda x: x,
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
}


def _pad_freq(x, k_f):
    p = (k_f - 1) // 2
    if not p:
        return x
    z = np.zeros(x.shape[:2] + (p,) + x.shape[3:])
    return np.concatenate([z, x, z], axis=2)


def conv_columns(x, k_t, k_f):
    """Causal-in-time, same-in-frequency columns.

    ``x``: (T + k_t - 1, F, C) with the history frames already prepended. Returns
    (T, F, C * k_t * k_f) ordered (channel, time tap, freq tap).
    """
    xp = _pad_freq(x[None], k_f)[0]
    win = sliding_window_view(xp, (k_t, k_f), axis=(0, 1))  # (T, F, C, k_t, k_f)
    return win.reshape(win.shape[:2] + (-1,))


class Model:
    """Float/mixed-precision forward pass over whole utterances or single frames."""

    def __init__(self, weights, cfg: ModelConfig, executor: Executor | None = None,
                 activation: str = "none"):
        self.cfg = cfg
        self.ex = executor if executor is not None else Executor(weights, cfg)
        self.act = _ACTIVATIONS[activation]

    # encoder / decoder

    def encode(self, spec_hist) -> np.ndarray:
        """(T + k_t - 1, F) complex frames, history first -> (T, F, D)."""
        kt, kf = self.cfg.enc_kernel
        x = np.stack([spec_hist.real, spec_hist.imag], axis=-1)
        return self.act(self.ex.dense("encoder.conv", conv_columns(x, kt, kf)))

    def decode(self, y_hist) -> np.ndarray:
        """(T + k_t - 1, F, D) block outputs, history first -> (T, F) complex."""
        kt, kf = self.cfg.dec_kernel
        out = self.ex.dense("decoder.deconv", conv_columns(y_hist, kt, kf))
        return out[..., 0] + 1j * out[..., 1]

    def decode_taps(self, y_t) -> np.ndarray:
        """Contributions of one block-output frame (F, D) to frames ``t .. t + k_t - 1``.

        Returns the un-finished accumulators, shape (k_t, F, 2), index 0 = current frame.
        """
        kt, kf = self.cfg.dec_kernel
        d = y_t.shape[-1]
        cols = conv_columns(y_t[None], 1, kf)[0]  # (F, D * k_f) ordered (channel, freq tap)
        accs = []
        for dt in range(kt):
            a = kt - 1 - dt  # time tap index in the correlation (flipped) layout
            idx = (np.arange(d)[:, None] * (kt * kf) + a * kf + np.arange(kf)[None, :]).ravel()
            accs.append(self.ex.dense_acc("decoder.deconv", cols, idx))
        return np.stack(accs)

    def decode_finish(self, acc) -> np.ndarray:
        out = self.ex.dense_finish("decoder.deconv", acc)
        return out[..., 0] + 1j * out[..., 1]

    # dual-path block

    def spectral_stage(self, b: int, x) -> np.ndarray:
        """(T, F, D) -> (T, F, D), each frame independently."""
        cfg = self.cfg
        t, f, d = x.shape
        q, fp = cfg.freq_compress, cfg.padded_bins
        xp = np.concatenate([x, np.zeros((t, fp - f, d))], axis=1)
        cols = xp.reshape(t, fp // q, q * d)  # ordered (freq tap, channel)
        p = f"block.{b}.spectral"
        z = self.act(self.ex.dense(f"{p}.down", cols))
        g = self.ex.gru(f"{p}.gru", z)  # (T, Fc, 2H)
        u = self.ex.dense(f"{p}.up", g).reshape(t, fp, d)
        return x + u[:, :f]

    def temporal_stage(self, b: int, x, h, c):
        """(T, F, D) with carry (h, c) of shape (F, H) -> output and new carry."""
        p = f"block.{b}.temporal"
        hs, h, c = self.ex.lstm(f"{p}.lstm", x, h, c)
        return x + self.ex.dense(f"{p}.proj", hs), h, c

    def blocks(self, x, carries):
        """Run all dual-path blocks; ``carries`` is a list of (h, c) replaced in place."""
        for b in range(self.cfg.n_blocks):
            x = self.spectral_stage(b, x)
            x, h, c = self.temporal_stage(b, x, *carries[b])
            carries[b] = (h, c)
        return x

    def zero_carries(self):
        shape = (self.cfg.n_bins, self.cfg.hidden)
        return [(np.zeros(shape), np.zeros(shape)) for _ in range(self.cfg.n_blocks)]

    def forward_spectra(self, spec) -> np.ndarray:
        """Whole-utterance network pass on (T, F) complex frames."""
        cfg = self.cfg
        hist_e = np.zeros((cfg.enc_kernel[0] - 1, spec.shape[1]), complex)
        x = self.encode(np.concatenate([hist_e, spec]))
        y = self.blocks(x, self.zero_carries())
        hist_d = np.zeros((cfg.dec_kernel[0] - 1,) + y.shape[1:])
        return self.decode(np.concatenate([hist_d, y]))


def build_model(weights, engine: EngineConfig, act_specs=None, weight_specs=None, tap=None) -> Model:
    cfg = engine.model
    plan = PrecisionPlan.for_mode(cfg, engine.mode, engine.plan_overrides)
    ex = Executor(weights, cfg, plan, act_specs, weight_specs, tap)
    return Model(weights, cfg, ex, engine.model.activation)


def forward_offline(signal, weights=None, engine: EngineConfig | None = None, model: Model | None = None,
                    bypass: bool = False) -> np.ndarray:
    """Full-utterance enhancement; the reference the streaming engine must reproduce.

    Output has ``len(signal) // l_c`` whole chunks and lags the input by ``l_c + l_f``
    samples. With ``bypass`` the network is skipped (analysis feeds synthesis directly).
    """
    engine = engine or EngineConfig()
    fr = engine.framing
    x = np.asarray(signal, dtype=np.float64)
    if x.size < fr.fft_size:
        raise ValueError(f"signal of {x.size} samples is shorter than one frame ({fr.fft_size})")
    if engine.pre_emphasis:
        x, _ = dsp.pre_emphasis(x, 0.0, engine.emphasis_coeff)
    n_frames = x.size // fr.l_c
    spec = dsp.analysis_stft(dsp.frame_signal(x, fr, n_frames), fr)
    if not bypass:
        model = model if model is not None else build_model(weights, engine)
        spec = model.forward_spectra(spec)
    window = dsp.build_synthesis_window(fr)
    return dsp.overlap_add(dsp.inverse_segment(spec, fr), window, fr)


# convenience wrappers in (channels, time, freq) layout

def encode(spec_frames, weights, cfg: ModelConfig) -> np.ndarray:
    m = Model(weights, cfg)
    hist = np.zeros((cfg.enc_kernel[0] - 1, spec_frames.shape[1]), complex)
    return m.encode(np.concatenate([hist, spec_frames])).transpose(2, 0, 1)


def decode(y, weights, cfg: ModelConfig) -> np.ndarray:
    m = Model(weights, cfg)
    y = np.asarray(y).transpose(1, 2, 0)
    hist = np.zeros((cfg.dec_kernel[0] - 1,) + y.shape[1:])
    return m.decode(np.concatenate([hist, y]))
