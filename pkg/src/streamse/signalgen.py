"""Seeded test signals and mixtures: noise, FIR filtering, SNR mixing, speed perturbation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLOR_EXPONENTS = {"white": 0, "pink": 1, "brown": 2}


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "white"
    amplitude: float = 0.002
    seed: int = 0

    def __post_init__(self):
        if self.kind not in COLOR_EXPONENTS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")

    def generate(self, n: int) -> np.ndarray:
        if self.kind == "white":
            return white_noise(n, self.amplitude, self.seed)
        return colored_noise(n, COLOR_EXPONENTS[self.kind], self.amplitude, self.seed)


def white_noise(n: int, std: float, seed: int = 0) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return np.random.default_rng(seed).standard_normal(n) * std


def colored_noise(n: int, exponent: float, scale: float, seed: int = 0) -> np.ndarray:
    """Gaussian noise with power spectrum ~ 1/f**exponent, unit std times ``scale``."""
    if n < 2:
        raise ValueError("colored noise needs at least 2 samples")
    spec = np.fft.rfft(np.random.default_rng(seed).standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    spec = spec / f ** (exponent / 2.0)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x / sd * scale if sd > 0 else np.zeros(n)


def fir_convolve(signal, impulse_response) -> np.ndarray:
    h = np.asarray(impulse_response, dtype=np.float64)
    if h.size == 0:
        raise ValueError("empty impulse response")
    x = np.asarray(signal, dtype=np.float64)
    return np.convolve(x, h)[:x.size]


def mix(speech, noise, snr_db: float):
    """Scale ``noise`` to the target SNR and add it. Returns (mixture, scaled_noise)."""
    s = np.asarray(speech, dtype=np.float64)
    n = np.asarray(noise, dtype=np.float64)
    if s.shape != n.shape:
        raise ValueError(f"length mismatch: {s.size} vs {n.size}")
    ps = float(s @ s)
    if ps == 0:
        raise ValueError("speech is all zeros")
    if np.isposinf(snr_db):
        scaled = np.zeros_like(n)
    else:
        pn = float(n @ n)
        if pn == 0:
            raise ValueError("noise has zero energy; cannot reach a finite SNR")
        scaled = n * np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))
    return s + scaled, scaled


def speed_perturb(signal, factor: float, taps: int = 32, beta: float = 8.0) -> np.ndarray:
    """Resample to ``round(n / factor)`` samples with a Kaiser-windowed sinc interpolator.

    Output sample ``j`` reads the input at position ``j * factor``; for factor > 1 the
    kernel's cutoff drops to ``1 / factor`` of Nyquist to avoid aliasing.
    """
    if not 0.8 <= factor <= 1.2:
        raise ValueError(f"speed factor {factor} outside [0.8, 1.2]")
    x = np.asarray(signal, dtype=np.float64)
    n_out = int(round(x.size / factor))
    t = np.arange(n_out) * factor
    base = np.floor(t).astype(np.int64)
    frac = t - base
    offs = np.arange(-taps // 2 + 1, taps // 2 + 1)  # 32 taps around the read position
    idx = base[:, None] + offs[None, :]
    d = offs[None, :] - frac[:, None]
    cutoff = min(1.0, 1.0 / factor)
    # Kaiser window evaluated at the fractional offsets, half-width taps / 2
    w = np.i0(beta * np.sqrt(np.clip(1.0 - (d / (taps / 2)) ** 2, 0.0, None))) / np.i0(beta)
    k = cutoff * np.sinc(cutoff * d) * w
    valid = (idx >= 0) & (idx < x.size)
    vals = np.where(valid, x[np.clip(idx, 0, x.size - 1)], 0.0)
    return np.sum(vals * k, axis=1)
