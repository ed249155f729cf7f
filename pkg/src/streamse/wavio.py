"""Mono 16 kHz WAV reading and writing (PCM16 or 32-bit float)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000


class WavFormatError(ValueError):
    pass


@dataclass
class WavClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE


def wav_read(path) -> WavClip:
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise WavFormatError(f"{path}: unreadable WAV ({e})") from e
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz (no resampling)")
    if data.ndim != 1:
        raise WavFormatError(f"{path}: {data.shape[1]} channels, expected mono")
    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        x = data
    else:
        raise WavFormatError(f"{path}: sample format {data.dtype} unsupported (PCM16 or float32 only)")
    return WavClip(x, rate)


def wav_write(path, clip: WavClip | np.ndarray, pcm16: bool = False) -> None:
    if not isinstance(clip, WavClip):
        clip = WavClip(np.asarray(clip))
    if clip.sample_rate != SAMPLE_RATE:
        raise WavFormatError(f"refusing to write {clip.sample_rate} Hz audio")
    x = np.asarray(clip.samples)
    if x.ndim != 1:
        raise WavFormatError(f"expected mono samples, got shape {x.shape}")
    if pcm16:
        data = np.clip(np.rint(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(path, SAMPLE_RATE, data)
