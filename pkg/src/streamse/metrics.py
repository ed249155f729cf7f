"""Objective enhancement metrics and the multi-resolution spectrogram loss.

All dB values are capped at ``CAP_DB`` so that perfect reconstructions give a finite,
comparable number instead of infinity.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-8
CAP_DB = 80.0
DEFAULT_RESOLUTIONS = ((512, 128), (1024, 256), (2048, 512))


def _pair(est, ref):
    est = np.asarray(est, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.size} vs {ref.size}")
    if est.size == 0:
        raise ValueError("empty signals")
    return est, ref


def _db(num: float, den: float) -> float:
    return float(min(10.0 * np.log10((num + EPS) / (den + EPS)), CAP_DB))


def sisdr(est, ref) -> float:
    """Scale-invariant SDR in dB (no mean removal; the projection alone gives scale invariance).

    The estimate is brought to unit energy before the ``EPS`` guards are applied, so the
    guards cannot break the invariance under rescaling of ``est``.
    """
    est, ref = _pair(est, ref)
    rr = float(ref @ ref)
    if rr == 0.0:
        raise ValueError("reference is all zeros")
    norm = float(np.sqrt(est @ est))
    if norm > 0:
        est = est / norm
    target = (float(est @ ref) / rr) * ref
    resid = est - target
    return _db(float(target @ target), float(resid @ resid))


def sisdri(est, mix, ref) -> float:
    return sisdr(est, ref) - sisdr(mix, ref)


def snr_db(est, ref) -> float:
    est, ref = _pair(est, ref)
    err = ref - est
    ee = float(err @ err)
    if ee == 0.0:
        return CAP_DB
    return float(min(10.0 * np.log10(float(ref @ ref) / ee + EPS), CAP_DB))


def stft_mag(x, n_fft: int, hop: int) -> np.ndarray:
    """Magnitude spectrogram (frames, bins) with a periodic Hann window and no centring."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < n_fft:
        raise ValueError(f"signal of {x.size} samples is shorter than fft size {n_fft}")
    win = np.hanning(n_fft + 1)[:-1]
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    return np.abs(np.fft.rfft(frames * win, axis=-1))


def spectral_convergence(est_mag, ref_mag) -> float:
    return float(np.linalg.norm(ref_mag - est_mag) / (np.linalg.norm(ref_mag) + EPS))


def log_mag_l1(est_mag, ref_mag) -> float:
    return float(np.mean(np.abs(np.log(ref_mag + EPS) - np.log(est_mag + EPS))))


def mrstft_loss(est, ref, resolutions=DEFAULT_RESOLUTIONS) -> float:
    """Mean over resolutions of spectral convergence plus log-magnitude L1."""
    est, ref = _pair(est, ref)
    longest = max(n for n, _ in resolutions)
    if est.size < longest:
        raise ValueError(f"signal of {est.size} samples is shorter than the largest fft ({longest})")
    total = 0.0
    for n_fft, hop in resolutions:
        e, r = stft_mag(est, n_fft, hop), stft_mag(ref, n_fft, hop)
        total += spectral_convergence(e, r) + log_mag_l1(e, r)
    return total / len(resolutions)


def report_row(metric: str, value_db: float, file: str | None = None) -> dict:
    return {"metric": metric, "value_db": float(value_db), "file": file}
