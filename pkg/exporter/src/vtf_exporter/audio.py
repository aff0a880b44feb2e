"""WAV loading and resampling for the exporter.

Only PCM WAV is handled (8/16/32 bit), which covers the usual corpus dumps;
multi-channel audio is averaged to mono and everything is resampled to the
model's native rate with a polyphase filter.
"""

from __future__ import annotations

import wave
from math import gcd

import numpy as np
from scipy.signal import resample_poly

_PCM_SCALE = {1: 127.0, 2: 32768.0, 4: 2147483648.0}
_PCM_DTYPE = {1: np.uint8, 2: np.int16, 4: np.int32}


def load_wav(path) -> tuple[np.ndarray, int]:
    """Mono float32 samples in [-1, 1] plus the file's sample rate."""
    with wave.open(str(path), "rb") as fh:
        width = fh.getsampwidth()
        if width not in _PCM_DTYPE:
            raise ValueError(f"{path}: unsupported sample width {width} bytes")
        rate = fh.getframerate()
        channels = fh.getnchannels()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype=_PCM_DTYPE[width]).astype(np.float32)
    if width == 1:  # 8-bit WAV is unsigned
        samples -= 128.0
    samples /= _PCM_SCALE[width]
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    if samples.size == 0:
        raise ValueError(f"{path}: no audio frames")
    return samples, rate


def resample(samples: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    if rate == target_rate:
        return samples.astype(np.float32)
    g = gcd(rate, target_rate)
    out = resample_poly(samples.astype(np.float64), target_rate // g, rate // g)
    return out.astype(np.float32)
