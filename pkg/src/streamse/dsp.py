"""Chunked STFT analysis and dual-window overlap-add synthesis.

Frames are ``[lookback | chunk | lookahead]`` = ``l_b + l_c + l_f`` samples, analysed with a
rectangular window. After the inverse DFT the lookback is discarded and the remaining
``l_c + l_f`` samples are weighted by a short synthesis window and overlap-added with hop
``l_c``. Only the last ``l_f`` samples of a segment overlap the next one, so a chunk can be
emitted as soon as its own frame has been processed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, FramingConfig


def pre_emphasis(chunk, carry: float, coeff: float = 0.97):
    """First-order pre-emphasis ``y[n] = x[n] - coeff * x[n-1]``.

    ``carry`` is the last raw sample of the previous chunk. Returns the filtered chunk and
    the new carry.
    """
    if not 0.0 <= coeff < 1.0:
        raise ValueError(f"pre-emphasis coefficient {coeff} outside [0, 1)")
    x = np.asarray(chunk, dtype=np.float64)
    if x.size == 0:
        return x.copy(), carry
    prev = np.empty_like(x)
    prev[0] = carry
    prev[1:] = x[:-1]
    return x - coeff * prev, float(x[-1])


def de_emphasis(chunk, carry: float, coeff: float = 0.97):
    """Exact inverse of :func:`pre_emphasis`; ``carry`` is the previous *output* sample."""
    x = np.asarray(chunk, dtype=np.float64)
    y = np.empty_like(x)
    prev = carry
    for n in range(x.size):
        prev = x[n] + coeff * prev
        y[n] = prev
    return y, (float(y[-1]) if x.size else carry)


def raw_synthesis_window(cfg) -> np.ndarray:
    """Piecewise-constant synthesis window before coverage normalisation.

    Value 1 on ``[l_f, l_c)`` and ``1 / (floor((l_c + l_b) / l_c) + 1)`` elsewhere.
    """
    if cfg.l_c <= cfg.l_f:
        raise ConfigError(f"synthesis window needs l_c > l_f, got l_c={cfg.l_c}, l_f={cfg.l_f}")
    n = cfg.l_c + cfg.l_f
    w = np.full(n, 1.0 / ((cfg.l_c + cfg.l_b) // cfg.l_c + 1))
    w[cfg.l_f:cfg.l_c] = 1.0
    return w


def cola_coverage(cfg, raw_window) -> np.ndarray:
    """Sum of all hop-shifted copies of ``raw_window`` seen at each segment offset."""
    w = np.asarray(raw_window, dtype=np.float64)
    n = cfg.l_c + cfg.l_f
    if w.shape != (n,):
        raise ConfigError(f"window length {w.shape} does not match l_c + l_f = {n}")
    cov = np.zeros(n)
    max_shift = n // cfg.l_c + 1
    for k in range(-max_shift, max_shift + 1):
        lo, hi = max(0, k * cfg.l_c), min(n, n + k * cfg.l_c)
        if lo < hi:
            cov[lo:hi] += w[lo - k * cfg.l_c:hi - k * cfg.l_c]
    if np.any(cov <= 0):
        raise ConfigError(f"synthesis window leaves offsets {np.flatnonzero(cov <= 0)} uncovered")
    return cov


def build_synthesis_window(cfg) -> np.ndarray:
    """Synthesis window normalised so that shifted copies sum to exactly one."""
    raw = raw_synthesis_window(cfg)
    return raw / cola_coverage(cfg, raw)


def analysis_stft(frame, cfg: FramingConfig | None = None) -> np.ndarray:
    """Real DFT of an unwindowed frame, or of every row of a 2-D stack of frames."""
    x = np.asarray(frame, dtype=np.float64)
    if cfg is not None and x.shape[-1] != cfg.fft_size:
        raise ValueError(f"frame length {x.shape[-1]} != fft_size {cfg.fft_size}")
    return np.fft.rfft(x, axis=-1)


def inverse_segment(spec, cfg: FramingConfig) -> np.ndarray:
    """Inverse DFT with the lookback discarded: the last ``l_c + l_f`` samples."""
    return np.fft.irfft(spec, n=cfg.fft_size, axis=-1)[..., cfg.l_b:]


@dataclass
class OlaState:
    tail: np.ndarray
    coverage: np.ndarray
    emphasis_carry: float = 0.0

    @classmethod
    def initial(cls, cfg: FramingConfig) -> "OlaState":
        return cls(
            tail=np.zeros(cfg.l_f),
            coverage=cola_coverage(cfg, raw_synthesis_window(cfg)),
        )


def synthesis_chunk(frame_spec, state: OlaState, window, cfg: FramingConfig) -> np.ndarray:
    """Inverse DFT, drop lookback, window, overlap-add; returns ``l_c`` finished samples.

    ``state.tail`` is updated in place with the partial last ``l_f`` samples.
    """
    seg = inverse_segment(frame_spec, cfg) * window
    seg[:cfg.l_f] += state.tail
    state.tail = seg[cfg.l_c:].copy()
    return seg[:cfg.l_c]


def frame_signal(x, cfg: FramingConfig, n_frames: int) -> np.ndarray:
    """Frames ending at sample ``k * l_c`` for ``k = 0 .. n_frames-1``, zeros before the start.

    Frame ``k`` is the analysis frame behind output chunk ``k``: its lookahead ends where
    chunk ``k`` of the input begins, which puts the output ``l_c + l_f`` samples behind
    the input.
    """
    x = np.asarray(x, dtype=np.float64)
    n = cfg.fft_size
    need = (n_frames - 1) * cfg.l_c
    padded = np.zeros(n + max(need, 0))
    m = min(x.size, need)
    padded[n:n + m] = x[:m]
    idx = np.arange(n_frames)[:, None] * cfg.l_c + np.arange(n)[None, :]
    return padded[idx]


def overlap_add(segments, window, cfg: FramingConfig) -> np.ndarray:
    """Offline overlap-add of windowed segments; segment ``k`` starts at ``k * l_c``."""
    segs = np.asarray(segments) * window
    k = segs.shape[0]
    pieces = -(-cfg.segment // cfg.l_c)
    out = np.zeros((k + pieces) * cfg.l_c)
    for i in range(pieces):
        part = segs[:, i * cfg.l_c:(i + 1) * cfg.l_c]
        w = part.shape[1]
        view = out[i * cfg.l_c:i * cfg.l_c + k * cfg.l_c].reshape(k, cfg.l_c)
        view[:, :w] += part
    return out[:k * cfg.l_c]


def identity_pipeline(x, cfg: FramingConfig, window=None) -> np.ndarray:
    """Analysis followed directly by synthesis; output is ``x`` delayed by ``l_c + l_f``."""
    x = np.asarray(x, dtype=np.float64)
    window = build_synthesis_window(cfg) if window is None else window
    n_frames = x.size // cfg.l_c
    spec = analysis_stft(frame_signal(x, cfg, n_frames), cfg)
    return overlap_add(inverse_segment(spec, cfg), window, cfg)
